"""Compatible pairs of evolving Hilbert spaces in pullback coordinates.

A :class:`SpaceFamily` never stores the pushforward maps themselves.  Every
element of ``H(t)`` or ``V(t)`` is carried by its pullback coefficient vector
in ``X_0 = R^n`` and the geometry lives entirely in the Gram maps ``B(t)``
(pivot space ``H``) and ``K(t)`` (energy space ``V``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import CubicSpline

from .errors import (
    CompatibilityError,
    DimensionError,
    SingularGramError,
    StencilError,
    TimeDomainError,
)

MatrixPath = Callable[[float], np.ndarray]

SPD_TOL = 1e-10
COND_CAP = 1e12


def fd_derivative(fun, t, lo, hi, h, richardson=True, one_sided=True):
    """Derivative of ``fun`` at ``t`` by finite differences on ``[lo, hi]``.

    Central differences are used when the stencil fits, second-order
    one-sided differences otherwise.  One Richardson step lifts either
    stencil to fourth order.
    """
    if t - h >= lo and t + h <= hi:
        def d(s):
            return (np.asarray(fun(t + s)) - np.asarray(fun(t - s))) / (2.0 * s)
    else:
        if not one_sided:
            raise StencilError(f"central stencil of width {h:g} does not fit at t={t:g}")
        sign = 1.0 if t + 2 * h <= hi else -1.0
        if sign < 0 and t - 2 * h < lo:
            raise StencilError(f"interval [{lo:g}, {hi:g}] too short for step {h:g}")

        def d(s):
            s = sign * s
            f0 = np.asarray(fun(t))
            return (-3.0 * f0 + 4.0 * np.asarray(fun(t + s)) - np.asarray(fun(t + 2 * s))) / (2.0 * s)

    if not richardson:
        return d(h)
    return (4.0 * d(h / 2.0) - d(h)) / 3.0


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes ``0 = t_0 < ... < t_M = T`` plus a quadrature rule.

    ``rule`` is ``"trapezoid"`` or ``"gauss3"`` (composite three-point
    Gauss-Legendre on every cell).
    """

    nodes: np.ndarray
    rule: str = "gauss3"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("time grids start at t=0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("time grid nodes must be strictly increasing")
        if self.rule not in ("trapezoid", "gauss3"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, T, M, rule="gauss3"):
        nodes = np.linspace(0.0, T, int(M) + 1)
        nodes[-1] = T
        return cls(nodes, rule)

    @property
    def T(self):
        return float(self.nodes[-1])

    @property
    def M(self):
        return self.nodes.size - 1

    @property
    def steps(self):
        return np.diff(self.nodes)

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def quadrature(self):
        """Return ``(points, weights)`` of the composite rule."""
        if self.rule == "trapezoid":
            dt = self.steps
            w = np.zeros_like(self.nodes)
            w[:-1] += 0.5 * dt
            w[1:] += 0.5 * dt
            return self.nodes.copy(), w
        x, wx = np.polynomial.legendre.leggauss(3)
        a, b = self.nodes[:-1], self.nodes[1:]
        half = 0.5 * (b - a)
        pts = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
        wts = half[:, None] * wx[None, :]
        return pts.ravel(), wts.ravel()

    def refined(self, factor=2):
        """Uniformly subdivide every cell into ``factor`` cells."""
        a, b = self.nodes[:-1], self.nodes[1:]
        s = np.linspace(0.0, 1.0, factor + 1)[:-1]
        inner = (a[:, None] + (b - a)[:, None] * s[None, :]).ravel()
        return TimeGrid(np.append(inner, self.nodes[-1]), self.rule)


@dataclass(frozen=True)
class SpaceFamily:
    """A compatible pair ``(V, H, phi_t)`` at desk scale.

    Parameters
    ----------
    dim : int
        Dimension ``n`` of the pullback coordinate space.
    horizon : float
        Final time ``T``.
    B, K : callable
        ``t -> (n, n)`` SPD Gram matrices of ``H(t)`` and ``V(t)`` in
        pullback coordinates.
    B_dot : callable, optional
        Analytic ``d/dt B(t)``; finite differences are used when absent.
    declared_CX : float, optional
        Claimed uniform equivalence constant, checked by
        :func:`check_compatibility`.
    """

    dim: int
    horizon: float
    B: MatrixPath
    K: MatrixPath
    B_dot: Optional[MatrixPath] = None
    declared_CX: Optional[float] = None
    name: str = "custom"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        for label, path in (("B", self.B), ("K", self.K)):
            m = np.asarray(path(0.0))
            if m.shape != (self.dim, self.dim):
                raise DimensionError(f"{label}(0) has shape {m.shape}, expected {(self.dim, self.dim)}")

    @property
    def T(self):
        return float(self.horizon)

    @property
    def fd_step(self):
        return 1e-5 * max(1.0, self.T)

    def check_time(self, t):
        t = float(t)
        slack = 1e-12 * max(1.0, self.T)
        if t < -slack or t > self.T + slack:
            raise TimeDomainError(f"t={t:g} outside [0, {self.T:g}]")
        return min(max(t, 0.0), self.T)

    def check_vector(self, v, label="vector"):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise DimensionError(f"{label} has shape {v.shape}, expected ({self.dim},)")
        return v

    def gram_H(self, t):
        return np.asarray(self.B(self.check_time(t)), dtype=float)

    def gram_V(self, t):
        return np.asarray(self.K(self.check_time(t)), dtype=float)

    @property
    def gram_H0(self):
        return self.gram_H(0.0)

    def B_prime(self, t, h=None, richardson=True, one_sided=True):
        """``d/dt B(t)``, analytic when available."""
        t = self.check_time(t)
        if self.B_dot is not None:
            return np.asarray(self.B_dot(t), dtype=float)
        h = self.fd_step if h is None else h
        return fd_derivative(self.B, t, 0.0, self.T, h, richardson, one_sided)


def _pair(fam, t, u_hat, v_hat):
    return fam.check_vector(u_hat, "u_hat"), fam.check_vector(v_hat, "v_hat")


def inner_H(fam, t, u_hat, v_hat):
    """``(u(t), v(t))_{H(t)} = u^T B(t) v``."""
    u, v = _pair(fam, t, u_hat, v_hat)
    return float(u @ fam.gram_H(t) @ v)


def inner_V(fam, t, u_hat, v_hat):
    u, v = _pair(fam, t, u_hat, v_hat)
    return float(u @ fam.gram_V(t) @ v)


def norm_H(fam, t, u_hat):
    return float(np.sqrt(max(inner_H(fam, t, u_hat, u_hat), 0.0)))


def norm_V(fam, t, u_hat):
    return float(np.sqrt(max(inner_V(fam, t, u_hat, u_hat), 0.0)))


def _cho(mat, label="Gram matrix"):
    mat = np.asarray(mat, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w[0] <= 0 or w[-1] / w[0] > COND_CAP:
        raise SingularGramError(f"{label} is singular or not SPD (eigenvalues in [{w[0]:.3g}, {w[-1]:.3g}])")
    return sla.cho_factor(mat)


def dual_apply(K, g):
    """Return ``K^{-1} g`` for the V-Gram matrix ``K``, checking conditioning."""
    return sla.cho_solve(_cho(K, "V Gram matrix"), g)


def dual_norm_Vstar(fam, t, g_hat):
    """Norm in ``V*(t)`` of the functional ``v -> g_hat . v_hat``."""
    g = fam.check_vector(g_hat, "g_hat")
    if not np.any(g):
        return 0.0
    return float(np.sqrt(max(g @ dual_apply(fam.gram_V(t), g), 0.0)))


def theta(fam, t, u0, h=None, one_sided=True):
    """``d/dt |phi_t u0|^2_{H(t)} = u0^T B'(t) u0``."""
    u = fam.check_vector(u0, "u0")
    return float(u @ fam.B_prime(t, h=h, one_sided=one_sided) @ u)


def lambda_form(fam, t, u_hat, v_hat, h=None, one_sided=True):
    """The transport correction ``lambda(t; u, v) = u^T B'(t) v``."""
    u, v = _pair(fam, t, u_hat, v_hat)
    return float(u @ fam.B_prime(t, h=h, one_sided=one_sided) @ v)


def T_operator(fam, t):
    """Riesz representative ``T_t = B(0)^{-1} B(t)`` of the pulled-back inner product."""
    B0 = fam.gram_H0
    return sla.cho_solve(_cho(B0, "B(0)"), fam.gram_H(t))


@dataclass
class CompatibilityReport:
    cx_H: float
    cx_V: float
    continuity_H: float
    continuity_V: float
    spd_margin_H: float
    spd_margin_V: float
    sampled_ratio_range: tuple
    declared_CX: Optional[float]
    continuity_bound: float
    semigroup: str = "structural: U(t,r)U(r,s) = U(t,s) holds exactly in pullback coordinates"

    @property
    def cx(self):
        return max(self.cx_H, self.cx_V)

    @property
    def declared_ok(self):
        return self.declared_CX is None or self.cx <= self.declared_CX * (1 + 1e-9)

    @property
    def continuity_ok(self):
        return max(self.continuity_H, self.continuity_V) <= self.continuity_bound

    @property
    def passed(self):
        return bool(np.isfinite(self.cx) and self.declared_ok and self.continuity_ok)

    def rows(self):
        return [
            ("compat.CX_H", self.cx_H, np.isfinite(self.cx_H)),
            ("compat.CX_V", self.cx_V, np.isfinite(self.cx_V)),
            ("compat.declared_CX", self.declared_CX if self.declared_CX is not None else float("nan"), self.declared_ok),
            ("compat.continuity_H", self.continuity_H, self.continuity_H <= self.continuity_bound),
            ("compat.continuity_V", self.continuity_V, self.continuity_V <= self.continuity_bound),
            ("compat.spd_margin_H", self.spd_margin_H, self.spd_margin_H > SPD_TOL),
            ("compat.spd_margin_V", self.spd_margin_V, self.spd_margin_V > SPD_TOL),
        ]


def _spd_margin(mat, t, label):
    mat = np.asarray(mat, dtype=float)
    if np.max(np.abs(mat - mat.T)) > 1e-10 * max(1.0, np.max(np.abs(mat))):
        raise CompatibilityError(f"{label}(t) is not symmetric at t={t:g}", t=t)
    w = np.linalg.eigvalsh(mat)
    scale = np.trace(mat) / mat.shape[0]
    margin = w[0] / scale if scale > 0 else -np.inf
    if not margin > SPD_TOL:
        raise CompatibilityError(f"{label}(t) is not positive definite at t={t:g} (min eigenvalue {w[0]:.3g})", t=t)
    return margin


def check_compatibility(fam, grid, n_samples=32, seed=0, continuity_bound=0.5):
    """Sample the compatibility axioms of ``fam`` on ``grid``.

    ``C_X`` is measured from the extreme generalized eigenvalues of ``B(t)``
    against ``B(0)`` (and ``K(t)`` against ``K(0)``).  The continuity
    modulus is the largest relative jump of ``|phi_t u|^2`` between adjacent
    grid nodes.  Raises :class:`CompatibilityError` at the first node where
    a Gram matrix fails to be SPD.
    """
    B0, K0 = fam.gram_H0, fam.gram_V(0.0)
    cx = {"H": 1.0, "V": 1.0}
    cont = {"H": 0.0, "V": 0.0}
    margin = {"H": np.inf, "V": np.inf}
    prev = None
    rng = np.random.default_rng(seed)
    probes = rng.standard_normal((n_samples, fam.dim))
    lo_ratio, hi_ratio = np.inf, 0.0
    for t in grid.nodes:
        Bt, Kt = fam.gram_H(t), fam.gram_V(t)
        margin["H"] = min(margin["H"], _spd_margin(Bt, t, "B"))
        margin["V"] = min(margin["V"], _spd_margin(Kt, t, "K"))
        for key, Gt, G0 in (("H", Bt, B0), ("V", Kt, K0)):
            w = sla.eigh(Gt, G0, eigvals_only=True)
            cx[key] = max(cx[key], np.sqrt(w[-1]), 1.0 / np.sqrt(w[0]))
        r = np.einsum("ij,jk,ik->i", probes, Bt, probes) / np.einsum("ij,jk,ik->i", probes, B0, probes)
        lo_ratio, hi_ratio = min(lo_ratio, r.min()), max(hi_ratio, r.max())
        if prev is not None:
            for key, Gt, Gp, G0 in (("H", Bt, prev[0], B0), ("V", Kt, prev[1], K0)):
                w = sla.eigh(Gt - Gp, G0, eigvals_only=True)
                cont[key] = max(cont[key], float(np.max(np.abs(w))))
        prev = (Bt, Kt)
    if not (1.0 / cx["H"] ** 2 * (1 - 1e-9) <= lo_ratio and hi_ratio <= cx["H"] ** 2 * (1 + 1e-9)):
        raise CompatibilityError("random probes fall outside the measured C_X bounds")
    return CompatibilityReport(
        cx_H=float(cx["H"]),
        cx_V=float(cx["V"]),
        continuity_H=cont["H"],
        continuity_V=cont["V"],
        spd_margin_H=float(margin["H"]),
        spd_margin_V=float(margin["V"]),
        sampled_ratio_range=(float(lo_ratio), float(hi_ratio)),
        declared_CX=fam.declared_CX,
        continuity_bound=continuity_bound,
    )


def lambda_bound(fam, grid):
    """``max_t |B(t)^{-1/2} B'(t) B(t)^{-1/2}|_2``, the uniform bound on lambda."""
    best = 0.0
    for t in grid.nodes:
        w = sla.eigh(fam.B_prime(t), fam.gram_H(t), eigvals_only=True)
        best = max(best, float(np.max(np.abs(w))))
    return best


def load_tabulated(path, name=None):
    """Read a family from a whitespace-separated table.

    The first three numbers are ``n, T, M``; then ``M + 1`` blocks follow,
    each holding ``B`` and then ``K`` row-major at uniformly spaced times.
    Entries are interpolated by cubic splines in ``t``.
    """
    with open(path) as fh:
        text = fh.read().replace(",", " ")
    data = np.array(text.split(), dtype=float)
    if data.size < 3:
        raise ValueError(f"{path}: missing header 'n, T, M'")
    n, T, M = int(data[0]), float(data[1]), int(data[2])
    body = data[3:]
    expected = (M + 1) * 2 * n * n
    if body.size != expected:
        raise ValueError(f"{path}: expected {expected} matrix entries, found {body.size}")
    blocks = body.reshape(M + 1, 2, n, n)
    times = np.linspace(0.0, T, M + 1)
    kind = "not-a-knot" if M >= 3 else None
    if kind is None:
        from scipy.interpolate import interp1d

        Bs = interp1d(times, blocks[:, 0], axis=0)
        Ks = interp1d(times, blocks[:, 1], axis=0)
        B_dot = None
    else:
        Bs = CubicSpline(times, blocks[:, 0], axis=0, bc_type=kind)
        Ks = CubicSpline(times, blocks[:, 1], axis=0, bc_type=kind)
        dB = Bs.derivative()
        B_dot = lambda t: np.asarray(dB(t))  # noqa: E731
    return SpaceFamily(
        dim=n,
        horizon=T,
        B=lambda t: np.asarray(Bs(t)),
        K=lambda t: np.asarray(Ks(t)),
        B_dot=B_dot,
        name=name or str(path),
    )


def save_tabulated(fam, path, M):
    """Write ``fam`` sampled at ``M + 1`` uniform times in the tabulated format."""
    times = np.linspace(0.0, fam.T, M + 1)
    with open(path, "w") as fh:
        fh.write(f"{fam.dim}, {fam.T!r}, {M}\n")
        for t in times:
            for G in (fam.gram_H(t), fam.gram_V(t)):
                for row in G:
                    fh.write(" ".join(repr(float(x)) for x in row) + "\n")
