"""Trajectories in ``L^2_X`` via pullback coefficient paths, material derivatives
and transport-theorem residuals.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PPoly

from .errors import DimensionError, PreconditionError, TimeDomainError
from .space import dual_apply, fd_derivative

SMOOTHNESS = ("C0", "C1", "closed-form")


class Trajectory:
    """A path ``t -> u_hat(t)`` in pullback coordinates.

    ``kind`` is ``"state"`` for elements of ``H(t)``/``V(t)`` and ``"dual"``
    for functionals in ``V*(t)`` acting as ``<g, v> = g_hat . v_hat``.
    """

    def __init__(self, fam, evaluator, derivative=None, smoothness="closed-form", kind="state"):
        if smoothness not in SMOOTHNESS:
            raise ValueError(f"unknown smoothness tag {smoothness!r}")
        if kind not in ("state", "dual"):
            raise ValueError(f"unknown trajectory kind {kind!r}")
        self.fam = fam
        self._eval = evaluator
        self._deriv = derivative
        self.smoothness = smoothness
        self.kind = kind

    @classmethod
    def from_function(cls, fam, fun, deriv=None, kind="state"):
        return cls(fam, fun, deriv, "closed-form", kind)

    @classmethod
    def constant(cls, fam, w, kind="state"):
        w = fam.check_vector(w, "w").copy()
        zero = np.zeros_like(w)
        return cls(fam, lambda t: w, lambda t: zero, "closed-form", kind)

    @classmethod
    def zero(cls, fam, kind="state"):
        return cls.constant(fam, np.zeros(fam.dim), kind)

    @classmethod
    def from_nodes(cls, fam, nodes, values, kind="state"):
        """Cubic-spline (not-a-knot) interpolant of nodal values covering ``[0, T]``."""
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (nodes.size, fam.dim):
            raise DimensionError(f"nodal values have shape {values.shape}, expected {(nodes.size, fam.dim)}")
        if abs(nodes[0]) > 1e-12 or abs(nodes[-1] - fam.T) > 1e-12 * max(1.0, fam.T):
            raise TimeDomainError("nodal trajectories must cover [0, T] exactly")
        bc = "not-a-knot" if nodes.size >= 4 else "natural"
        if nodes.size == 2:
            spline = PPoly(np.vstack([(values[1] - values[0]) / (nodes[1] - nodes[0]), values[0]])[:, None, :], nodes)
        else:
            spline = CubicSpline(nodes, values, axis=0, bc_type=bc)
        return cls._from_ppoly(fam, spline, kind)

    @classmethod
    def _from_ppoly(cls, fam, pp, kind):
        degree = pp.c.shape[0] - 1
        traj = cls(fam, lambda t: pp(t), None, "C1" if degree >= 2 else "C0", kind)
        traj._ppoly = pp
        return traj

    @classmethod
    def piecewise_constant(cls, fam, nodes, cell_values, kind="state"):
        """Right-continuous step path with one value per cell of ``nodes``."""
        nodes = np.asarray(nodes, dtype=float)
        cell_values = np.asarray(cell_values, dtype=float)
        if cell_values.shape != (nodes.size - 1, fam.dim):
            raise DimensionError("need one value per cell")

        def ev(t):
            k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)
            return cell_values[k]

        return cls(fam, ev, None, "C0", kind)

    def __call__(self, t):
        t = self.fam.check_time(t)
        return np.asarray(self._eval(t), dtype=float)

    def sample(self, ts):
        """Stack of values at the times ``ts``; shape ``(len(ts), n)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if hasattr(self, "_ppoly"):
            return np.asarray(self._ppoly(np.clip(ts, 0.0, self.fam.T)), dtype=float)
        return np.array([self(t) for t in ts])

    def derivative_at(self, t):
        t = self.fam.check_time(t)
        if self._deriv is not None:
            return np.asarray(self._deriv(t), dtype=float)
        return fd_derivative(self._eval, t, 0.0, self.fam.T, self.fam.fd_step)

    def _combine(self, other, a, b):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if other.fam is not self.fam or other.kind != self.kind:
            raise ValueError("can only combine trajectories on the same family and of the same kind")
        order = {"C0": 0, "C1": 1, "closed-form": 2}
        tag = min(self.smoothness, other.smoothness, key=order.get)
        deriv = None
        if tag != "C0":
            deriv = lambda t: a * self.derivative_at(t) + b * other.derivative_at(t)  # noqa: E731
        return Trajectory(self.fam, lambda t: a * self._eval(t) + b * other._eval(t), deriv, tag, self.kind)

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, c):
        c = float(c)
        deriv = None if self.smoothness == "C0" else (lambda t: c * self.derivative_at(t))
        traj = Trajectory(self.fam, lambda t: c * self._eval(t), deriv, self.smoothness, self.kind)
        return traj

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def to_csv(self, path, nodes):
        nodes = np.asarray(nodes, dtype=float)
        vals = self.sample(nodes)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"c{i + 1}" for i in range(self.fam.dim)])
            for t, row in zip(nodes, vals):
                w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, fam, path, kind="state"):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[0] != "t" or len(header) != fam.dim + 1:
            raise DimensionError(f"{path}: header {header!r} does not match dimension {fam.dim}")
        arr = np.array(body, dtype=float)
        return cls.from_nodes(fam, arr[:, 0], arr[:, 1:], kind)


def strong_material_derivative(traj):
    """Material derivative ``phi_t(d/dt phi_{-t} u)``: in pullback coordinates, ``u_hat'``."""
    if traj.smoothness == "C0":
        raise PreconditionError("C0 trajectories have no strong material derivative")
    if hasattr(traj, "_ppoly"):
        return Trajectory._from_ppoly(traj.fam, traj._ppoly.derivative(), traj.kind)
    return Trajectory(traj.fam, traj.derivative_at, None, "C1", traj.kind)


def _sq_norms(traj, which, ts):
    fam = traj.fam
    vals = traj.sample(ts)
    out = np.empty(len(ts))
    for i, (t, u) in enumerate(zip(ts, vals)):
        if which in ("H", "V"):
            if traj.kind != "state":
                raise PreconditionError(f"a dual trajectory has no {which} norm")
            G = fam.gram_H(t) if which == "H" else fam.gram_V(t)
            out[i] = u @ G @ u
        elif which == "Vstar":
            g = u if traj.kind == "dual" else fam.gram_H(t) @ u
            out[i] = g @ dual_apply(fam.gram_V(t), g) if np.any(g) else 0.0
        else:
            raise ValueError(f"unknown norm {which!r}")
    return out


def l2_norm(traj, which, grid):
    """``(int_0^T |u(t)|^2)^{1/2}`` in the ``H``, ``V`` or ``Vstar`` scale."""
    pts, wts = grid.quadrature()
    return float(np.sqrt(max(wts @ _sq_norms(traj, which, pts), 0.0)))


def sup_norm_H(traj, grid):
    return float(np.sqrt(np.max(_sq_norms(traj, "H", grid.nodes))))


def pairing(fam, t, g, v, kind):
    """``<g, v>`` with ``g`` in state or dual coordinates and ``v`` a state vector."""
    return float(g @ v) if kind == "dual" else float(g @ fam.gram_H(t) @ v)


@dataclass(frozen=True)
class TestFunctionFamily:
    """Transported test functions ``eta_j(t) = zeta_j(t) phi_t w_j``."""

    __test__ = False

    zetas: tuple
    zeta_primes: tuple
    weights: tuple

    def __post_init__(self):
        if not self.zetas:
            raise PreconditionError("empty test family")

    @classmethod
    def sines(cls, fam, J=4):
        """``zeta_j = sin(j pi t / T)`` paired with every coordinate vector."""
        T = fam.T
        zetas, primes, ws = [], [], []
        for j in range(1, J + 1):
            for i in range(fam.dim):
                e = np.zeros(fam.dim)
                e[i] = 1.0
                zetas.append(lambda t, j=j: np.sin(j * np.pi * t / T))
                primes.append(lambda t, j=j: j * np.pi / T * np.cos(j * np.pi * t / T))
                ws.append(e)
        return cls(tuple(zetas), tuple(primes), tuple(ws))

    def check_endpoints(self, T, tol=1e-12):
        return all(abs(z(0.0)) <= tol and abs(z(T)) <= tol for z in self.zetas)


def weak_matder_defects(traj, cand, tests, grid, normalize=True):
    """Per-test defects of the weak material derivative identity.

    For each test ``eta`` returns ``int <g, eta> + int (u, eta')_H + int lambda(u, eta)``,
    divided by ``|eta|_{L^2_V}`` when ``normalize`` is set.
    """
    fam = traj.fam
    if not tests.check_endpoints(fam.T):
        raise PreconditionError("test functions must vanish at t=0 and t=T")
    pts, wts = grid.quadrature()
    U = traj.sample(pts)
    G = cand.sample(pts)
    defects = np.zeros(len(tests.zetas))
    norms = np.zeros(len(tests.zetas))
    for q, (t, w) in enumerate(zip(pts, wts)):
        B, Bp = fam.gram_H(t), fam.B_prime(t)
        Bu = B @ U[q]
        Bpu = Bp @ U[q]
        g = G[q] if cand.kind == "dual" else B @ G[q]
        K = fam.gram_V(t) if normalize else None
        for j, (z, zp, e) in enumerate(zip(tests.zetas, tests.zeta_primes, tests.weights)):
            zt, zpt = z(t), zp(t)
            defects[j] += w * (zt * (g @ e) + zpt * (Bu @ e) + zt * (Bpu @ e))
            if normalize:
                norms[j] += w * zt * zt * (e @ K @ e)
    if normalize:
        defects = defects / np.sqrt(norms)
    return defects


def weak_matder_residual(traj, cand, tests, grid, normalize=True):
    """Largest defect over ``tests``; near zero iff ``cand`` acts as the weak material derivative."""
    return float(np.max(np.abs(weak_matder_defects(traj, cand, tests, grid, normalize))))


def _require_smooth(*trajs):
    for tr in trajs:
        if tr.smoothness == "C0":
            raise PreconditionError("transport checks need C1 or closed-form trajectories")


def transport_residual(u, v, grid, step=None, richardson=True, normalize=True):
    """Defect of ``d/dt (u, v)_H = (u', v)_H + (v', u)_H + lambda(u, v)`` at interior nodes.

    ``step`` is the finite-difference step for the left-hand side (default:
    the family's step with one Richardson extrapolation).
    """
    _require_smooth(u, v)
    fam = u.fam
    h = fam.fd_step if step is None else step
    du, dv = strong_material_derivative(u), strong_material_derivative(v)

    def b(t):
        return u(t) @ fam.gram_H(t) @ v(t)

    worst, scale = 0.0, 0.0
    for t in grid.nodes[1:-1]:
        lhs = fd_derivative(b, t, 0.0, fam.T, h, richardson=richardson, one_sided=False)
        B = fam.gram_H(t)
        ut, vt, dut, dvt = u(t), v(t), du(t), dv(t)
        rhs = dut @ B @ vt + dvt @ B @ ut + ut @ fam.B_prime(t) @ vt
        worst = max(worst, abs(lhs - rhs))
        nu, nv = np.sqrt(ut @ B @ ut), np.sqrt(vt @ B @ vt)
        ndu, ndv = np.sqrt(dut @ B @ dut), np.sqrt(dvt @ B @ dvt)
        scale = max(scale, nu * nv + ndu * nv + nu * ndv)
    if normalize and scale > 0:
        return float(worst / scale)
    return float(worst)


def ibp_check(u, v, grid):
    """Defect of the integrated transport identity between ``t=0`` and ``t=T``."""
    _require_smooth(u, v)
    fam = u.fam
    du, dv = strong_material_derivative(u), strong_material_derivative(v)
    pts, wts = grid.quadrature()
    U, V, DU, DV = u.sample(pts), v.sample(pts), du.sample(pts), dv.sample(pts)
    integrand = np.empty(len(pts))
    for q, t in enumerate(pts):
        B = fam.gram_H(t)
        integrand[q] = DU[q] @ B @ V[q] + DV[q] @ B @ U[q] + U[q] @ fam.B_prime(t) @ V[q]
    T = fam.T
    ends = u(T) @ fam.gram_H(T) @ v(T) - u(0.0) @ fam.gram_H0 @ v(0.0)
    return float(abs(ends - wts @ integrand))


def embedding_ratio(traj, grid):
    """``max_t |u(t)|_H / (|u|_{L^2_V} + |u'|_{L^2_{V*}})`` for a smooth trajectory."""
    denom = l2_norm(traj, "V", grid) + l2_norm(strong_material_derivative(traj), "Vstar", grid)
    return sup_norm_H(traj, grid) / denom if denom > 0 else 0.0
