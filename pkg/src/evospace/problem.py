"""Linear parabolic problems ``L u' + A u + Lambda u = f`` in pullback coordinates.

All operators are stored as form matrices with the test index on the rows:
``l(t; u, v) = v^T L_B(t) u``, ``a(t; u, v) = v^T A(t) u`` and
``lambda(t; u, v) = v^T B'(t) u``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import PreconditionError
from .space import COND_CAP, SpaceFamily, dual_apply, fd_derivative
from .trajectories import Trajectory, strong_material_derivative

MatrixPath = Callable[[float], np.ndarray]

SYMMETRY_TOL = 1e-10
GROWTH_LIMIT = 1.5


@dataclass(frozen=True)
class ParabolicProblem:
    """Operators and data of the evolving-space problem.

    ``L_form`` defaults to ``B`` (``L = Id``).  When ``A_s`` depends on time,
    supply at most one of ``A_s_dot`` and ``r_form``; with neither, ``A_s'``
    falls back to finite differences.  ``f`` is a state trajectory (tagged
    ``L^2_H``) or a dual trajectory (tagged ``L^2_{V*}``).
    """

    fam: SpaceFamily
    A_s: MatrixPath
    f: Trajectory
    u0: np.ndarray
    L_form: Optional[MatrixPath] = None
    L_form_dot: Optional[MatrixPath] = None
    A_s_dot: Optional[MatrixPath] = None
    r_form: Optional[Callable[[float, np.ndarray], float]] = None
    A_n: Optional[MatrixPath] = None
    name: str = "custom"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "u0", self.fam.check_vector(self.u0, "u0"))
        if self.f.fam is not self.fam:
            raise ValueError("load trajectory lives on a different family")
        if self.A_s_dot is not None and self.r_form is not None:
            raise ValueError("supply A_s_dot or r_form, not both")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def f_tag(self):
        return "H" if self.f.kind == "state" else "Vstar"

    @property
    def identity_L(self):
        return self.L_form is None

    def L_B(self, t):
        if self.L_form is None:
            return self.fam.gram_H(t)
        return np.asarray(self.L_form(self.fam.check_time(t)), dtype=float)

    def A(self, t):
        t = self.fam.check_time(t)
        A = np.asarray(self.A_s(t), dtype=float)
        if self.A_n is not None:
            A = A + np.asarray(self.A_n(t), dtype=float)
        return A

    def A_n_at(self, t):
        if self.A_n is None:
            return np.zeros((self.fam.dim, self.fam.dim))
        return np.asarray(self.A_n(self.fam.check_time(t)), dtype=float)

    def As_prime(self, t, h=None, richardson=True):
        t = self.fam.check_time(t)
        if self.A_s_dot is not None:
            return np.asarray(self.A_s_dot(t), dtype=float)
        h = self.fam.fd_step if h is None else h
        return fd_derivative(self.A_s, t, 0.0, self.fam.T, h, richardson)

    def r(self, t, y, h=None, richardson=True):
        """The remainder ``r(t; y)`` of the differentiated symmetric form."""
        if self.r_form is not None:
            return float(self.r_form(t, y))
        As = np.asarray(self.A_s(self.fam.check_time(t)), dtype=float)
        if np.max(np.abs(As - As.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(As))):
            raise PreconditionError("a_s is nonsymmetric: r cannot be derived from A_s', supply r_form")
        return float(y @ self.As_prime(t, h, richardson) @ y)

    def load(self, t):
        """Dual coordinates of ``f(t)``: ``<f(t), v> = F . v_hat``."""
        ft = self.f(t)
        return ft if self.f.kind == "dual" else self.fam.gram_H(t) @ ft


def m_form(prob, t, h=None, richardson=True):
    """Form matrix of ``m(t; ., .)``, which equals ``d/dt L_B(t)``."""
    if prob.L_form_dot is not None:
        return np.asarray(prob.L_form_dot(prob.fam.check_time(t)), dtype=float)
    if prob.identity_L:
        return prob.fam.B_prime(t, h=h, richardson=richardson)
    h = prob.fam.fd_step if h is None else h
    return fd_derivative(prob.L_B, prob.fam.check_time(t), 0.0, prob.fam.T, h, richardson)


def L_dot_form(prob, t):
    """Form matrix of ``L'(t)``: ``m - Lambda L`` in pullback coordinates."""
    B = prob.fam.gram_H(t)
    LB = prob.L_B(t)
    return m_form(prob, t) - prob.fam.B_prime(t) @ np.linalg.solve(B, LB)


@dataclass
class AssumptionEntry:
    id: str
    constants: dict
    worst_t: Optional[float]
    passed: bool
    note: str = ""


@dataclass
class AssumptionReport:
    entries: list = field(default_factory=list)

    def add(self, entry):
        if any(e.id == entry.id for e in self.entries):
            raise ValueError(f"duplicate assumption id {entry.id}")
        self.entries.append(entry)

    def __getitem__(self, key):
        for e in self.entries:
            if e.id == key:
                return e
        raise KeyError(key)

    def __contains__(self, key):
        return any(e.id == key for e in self.entries)

    def ids(self):
        return [e.id for e in self.entries]

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def merged(self, other):
        out = AssumptionReport(list(self.entries))
        for e in other.entries:
            out.add(e)
        return out


def _chol_lower(G):
    return np.linalg.cholesky(0.5 * (G + G.T))


def _form_norm(M, row_gram, col_gram):
    """``sup w^T M v / (|w|_row |v|_col)``."""
    Lr, Lc = _chol_lower(row_gram), _chol_lower(col_gram)
    X = sla.solve_triangular(Lr, M, lower=True)
    X = sla.solve_triangular(Lc, X.T, lower=True).T
    return float(np.linalg.norm(X, 2))


def _gen_eigs(A, G):
    return sla.eigh(0.5 * (A + A.T), 0.5 * (G + G.T), eigvals_only=True)


def _truncation_growth(const_at, n, grid):
    """Projected growth of a boundedness constant beyond the current truncation.

    Constants are measured on the leading ``n/4``, ``n/2`` and ``n`` modes.
    Increments that shrink geometrically extrapolate to a finite limit and
    the ratio ``limit / C_n`` is returned; increments that do not shrink
    signal a constant that depends on the discretization and give ``inf``.
    Very small hierarchies fall back to ``C_n / C_{n/2}``.
    """
    if n < 2:
        return 1.0

    def peak(N):
        return max(const_at(t, N) for t in grid.nodes)

    full, half = peak(n), peak(max(1, n // 2))
    if full <= 1e-12:
        return 1.0
    d2 = full - half
    if d2 <= 1e-12 * full:
        return 1.0
    if n < 4:
        return full / half if half > 0 else np.inf
    d1 = half - peak(max(1, n // 4))
    if d1 <= 0:
        return full / half if half > 0 else np.inf
    q = d2 / d1
    if q >= 1.0:
        return np.inf
    return (full + d2 * q / (1.0 - q)) / full


def _random_paths(n, samples, seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((samples, 3, n))

    def path(c):
        return (lambda t: c[0] + c[1] * t + c[2] * np.sin(2 * t),
                lambda t: c[1] + 2 * c[2] * np.cos(2 * t))

    return [path(c) for c in coeffs]


def validate_L(prob, grid, samples=4, seed=0):
    """Sampled checks of (L1)-(L8) on the grid nodes."""
    fam = prob.fam
    n = fam.dim
    worst = {k: (None, None) for k in ("L1lo", "L1hi", "L2", "L3", "L4", "L5", "L6", "L8")}

    def upd(key, val, t, mode="max"):
        cur = worst[key][0]
        if cur is None or (val > cur if mode == "max" else val < cur):
            worst[key] = (val, t)

    for t in grid.nodes:
        B, K, LB = fam.gram_H(t), fam.gram_V(t), prob.L_B(t)
        upd("L2", float(np.linalg.norm(LB - LB.T) / max(np.linalg.norm(LB), 1e-300)), t)
        w = _gen_eigs(LB, B)
        upd("L3", float(np.max(np.abs(w))), t)
        upd("L4", float(w[0]), t, "min")
        Lmat = np.linalg.solve(B, LB)
        Kinv = np.linalg.inv(K)
        wl = _gen_eigs(Lmat @ Kinv @ Lmat.T, Kinv)
        upd("L1lo", float(np.sqrt(max(wl[0], 0.0))), t, "min")
        upd("L1hi", float(np.sqrt(wl[-1])), t)
        upd("L5", float(np.sqrt(_gen_eigs(Lmat.T @ K @ Lmat, K)[-1])), t)
        upd("L6", float(np.linalg.cond(Lmat)), t)
        Ld = L_dot_form(prob, t)
        upd("L8", float(np.sqrt(max(_gen_eigs(Ld.T @ Kinv @ Ld, B)[-1], 0.0))), t)

    # (L7): d/dt(L v) = L' v + L v' with L' = B^{-1} Ldot_form, via finite differences.
    l7, l7_t = 0.0, None
    for v, dv in _random_paths(n, samples, seed):
        def Lv(s, v=v):
            return np.linalg.solve(fam.gram_H(s), prob.L_B(s)) @ v(s)

        for t in grid.nodes[1:-1]:
            B = fam.gram_H(t)
            lhs = fd_derivative(Lv, t, 0.0, fam.T, fam.fd_step)
            rhs = np.linalg.solve(B, L_dot_form(prob, t)) @ v(t) + np.linalg.solve(B, prob.L_B(t)) @ dv(t)
            d = lhs - rhs
            scale = np.sqrt(rhs @ B @ rhs) + np.sqrt(v(t) @ B @ v(t))
            val = float(np.sqrt(d @ B @ d) / scale)
            if val > l7:
                l7, l7_t = val, float(t)

    def c3_at(t, N):
        return float(np.max(np.abs(_gen_eigs(prob.L_B(t)[:N, :N], fam.gram_H(t)[:N, :N]))))

    def c5_at(t, N):
        B, K = fam.gram_H(t)[:N, :N], fam.gram_V(t)[:N, :N]
        Ld = L_dot_form(prob, t)[:N, :N]
        return float(np.sqrt(max(_gen_eigs(Ld.T @ np.linalg.solve(K, Ld), B)[-1], 0.0)))

    g3 = _truncation_growth(c3_at, n, grid)
    g8 = _truncation_growth(c5_at, n, grid)
    rep = AssumptionReport()
    lo, hi = worst["L1lo"], worst["L1hi"]
    rep.add(AssumptionEntry("L1", {"C1": lo[0], "C2": hi[0]}, lo[1], bool(lo[0] > 0 and np.isfinite(hi[0]))))
    rep.add(AssumptionEntry("L2", {"symmetry_defect": worst["L2"][0]}, worst["L2"][1], bool(worst["L2"][0] <= SYMMETRY_TOL)))
    rep.add(AssumptionEntry("L3", {"C3": worst["L3"][0], "truncation_growth": g3}, worst["L3"][1],
                            bool(np.isfinite(worst["L3"][0]) and g3 <= GROWTH_LIMIT)))
    rep.add(AssumptionEntry("L4", {"C4": worst["L4"][0]}, worst["L4"][1], bool(worst["L4"][0] > 0)))
    rep.add(AssumptionEntry("L5", {"C": worst["L5"][0]}, worst["L5"][1], bool(np.isfinite(worst["L5"][0]))))
    rep.add(AssumptionEntry("L6", {"cond": worst["L6"][0]}, worst["L6"][1], bool(worst["L6"][0] < COND_CAP),
                            "surrogate: L(t) invertible with bounded condition number"))
    rep.add(AssumptionEntry("L7", {"residual": l7}, l7_t, bool(l7 <= 1e-6)))
    rep.add(AssumptionEntry("L8", {"C5": worst["L8"][0], "truncation_growth": g8}, worst["L8"][1],
                            bool(np.isfinite(worst["L8"][0]) and g8 <= GROWTH_LIMIT)))
    return rep


def garding_constants(prob, grid, n_grid=50):
    """Estimate ``(C1, C2)`` with ``a(v, v) >= C1 |v|_V^2 - C2 |v|_H^2`` on the grid.

    ``C1`` runs over a logarithmic grid below the smallest (over ``t``)
    largest generalized eigenvalue of ``A_sym`` against ``K``; for each
    candidate ``C2`` is the smallest admissible value.  The pair with the
    smallest ratio ``C2 / C1`` wins, ties going to the larger ``C1``.
    """
    fam = prob.fam
    reduced = []
    c_hi = np.inf
    for t in grid.nodes:
        A, K, B = prob.A(t), fam.gram_V(t), fam.gram_H(t)
        As = 0.5 * (A + A.T)
        c_hi = min(c_hi, float(_gen_eigs(As, K)[-1]))
        Lb = _chol_lower(B)
        tA = sla.solve_triangular(Lb, sla.solve_triangular(Lb, As, lower=True).T, lower=True)
        tK = sla.solve_triangular(Lb, sla.solve_triangular(Lb, K, lower=True).T, lower=True)
        reduced.append((0.5 * (tA + tA.T), 0.5 * (tK + tK.T), float(t)))
    if not c_hi > 0:
        return 0.0, np.inf, None
    best = None
    for c1 in np.geomspace(c_hi * 1e-3, c_hi, n_grid):
        c2, t2 = 0.0, None
        for tA, tK, t in reduced:
            lam = float(np.linalg.eigvalsh(tA - c1 * tK)[0])
            if -lam > c2:
                c2, t2 = -lam, t
        ratio = c2 / c1
        if best is None or ratio < best[0] * (1 - 1e-9) or (ratio <= best[0] * (1 + 1e-9) + 1e-15 and c1 > best[1]):
            best = (ratio, float(c1), float(c2), t2)
    return best[1], best[2], best[3]


def a7_residual(prob, grid, samples=4, seed=0, step=None, richardson=True):
    """Worst normalized defect of ``d/dt a_s(y, y) = 2 a_s(y, y') + r(y)`` on random paths."""
    fam = prob.fam
    h = fam.fd_step if step is None else step
    worst, worst_t = 0.0, None
    for y, dy in _random_paths(fam.dim, samples, seed + 1):
        def quad(s, y=y):
            return y(s) @ np.asarray(prob.A_s(s)) @ y(s)

        for t in grid.nodes[1:-1]:
            lhs = fd_derivative(quad, t, 0.0, fam.T, h, richardson=richardson, one_sided=False)
            yt, dyt = y(t), dy(t)
            As = np.asarray(prob.A_s(t))
            rhs = 2.0 * (dyt @ As @ yt) + prob.r(t, yt, h=h, richardson=richardson)
            K = fam.gram_V(t)
            scale = yt @ K @ yt + np.sqrt((yt @ K @ yt) * (dyt @ K @ dyt))
            val = abs(lhs - rhs) / scale
            if val > worst:
                worst, worst_t = float(val), float(t)
    return worst, worst_t


def validate_A(prob, grid, samples=4, seed=0):
    """Sampled checks of (A1)-(A8) on the grid nodes."""
    fam = prob.fam
    n = fam.dim
    rep = AssumptionReport()

    c1, c2, t12 = garding_constants(prob, grid)
    rep.add(AssumptionEntry("A1", {"C1": c1, "C2": c2}, t12, bool(c1 > 0 and np.isfinite(c2))))

    def sweep(at):
        best, bt = 0.0, None
        for t in grid.nodes:
            v = at(t, n)
            if v > best:
                best, bt = v, float(t)
        return best, bt, _truncation_growth(at, n, grid)

    def bound(M_at, row, col):
        return sweep(lambda t, N: _form_norm(M_at(t)[:N, :N], row(t)[:N, :N], col(t)[:N, :N]))

    c, ct, g = bound(prob.A, fam.gram_V, fam.gram_V)
    rep.add(AssumptionEntry("A2", {"C3": c, "truncation_growth": g}, ct, bool(np.isfinite(c) and g <= GROWTH_LIMIT)))

    rng = np.random.default_rng(seed)
    probes = rng.standard_normal((samples, n))
    K0 = fam.gram_V(0.0)
    vals = np.array([[y @ np.asarray(prob.A_s(t)) @ y / (y @ K0 @ y) for t in grid.nodes] for y in probes])
    slopes = np.abs(np.diff(vals, axis=1)) / grid.steps[None, :]
    lip = float(np.max(slopes)) if slopes.size else 0.0
    rep.add(AssumptionEntry("A3", {"sampled_lipschitz": lip}, None, bool(np.isfinite(lip)),
                            "sampled modulus only; absolute continuity is assumed"))

    if prob.A_n is None:
        rep.add(AssumptionEntry("A4", {"C1": 0.0, "truncation_growth": 1.0}, None, True, "a_n absent"))
    else:
        c, ct, g = bound(prob.A_n_at, fam.gram_H, fam.gram_V)
        rep.add(AssumptionEntry("A4", {"C1": c, "truncation_growth": g}, ct, bool(np.isfinite(c) and g <= GROWTH_LIMIT)))

    c, ct, g = bound(lambda t: np.asarray(prob.A_s(t), dtype=float), fam.gram_V, fam.gram_V)
    rep.add(AssumptionEntry("A5", {"C2": c, "truncation_growth": g}, ct, bool(np.isfinite(c) and g <= GROWTH_LIMIT)))

    low, low_t = np.inf, None
    for t in grid.nodes:
        w = float(_gen_eigs(np.asarray(prob.A_s(t), dtype=float), fam.gram_V(t))[0])
        if w < low:
            low, low_t = w, float(t)
    rep.add(AssumptionEntry("A6", {"min_eig": low}, low_t, bool(low >= -1e-12)))

    try:
        res, rt = a7_residual(prob, grid, samples, seed)
        rep.add(AssumptionEntry("A7", {"residual": res}, rt, bool(res <= 1e-6)))
    except PreconditionError as exc:
        rep.add(AssumptionEntry("A7", {"residual": float("nan")}, None, False, str(exc)))

    try:
        if prob.r_form is None:
            c8, ct, g = sweep(lambda t, N: float(np.max(np.abs(
                _gen_eigs(prob.As_prime(t)[:N, :N], fam.gram_V(t)[:N, :N])))))
            rep.add(AssumptionEntry("A8", {"C3": c8, "truncation_growth": g}, ct, bool(np.isfinite(c8) and g <= GROWTH_LIMIT)))
        else:
            c8, ct = 0.0, None
            for t in grid.nodes:
                K, B = fam.gram_V(t), fam.gram_H(t)
                _, vecs = sla.eigh(K, B)
                cand = np.vstack([probes, vecs.T])
                for v in cand:
                    val = abs(prob.r(t, v)) / (v @ K @ v)
                    if val > c8:
                        c8, ct = float(val), float(t)
            rep.add(AssumptionEntry("A8", {"C3": c8}, ct, bool(np.isfinite(c8))))
    except PreconditionError as exc:
        rep.add(AssumptionEntry("A8", {"C3": float("nan")}, None, False, str(exc)))
    return rep


def weak_form_residual(prob, u, grid, u_dot=None):
    """Largest ``V*``-norm defect of ``l(u') + a(u) + lambda(u) = <f, .>`` at grid nodes."""
    fam = prob.fam
    du = strong_material_derivative(u) if u_dot is None else u_dot
    worst = 0.0
    for t in grid.nodes:
        ut = u(t)
        d = prob.L_B(t) @ du(t) + (prob.A(t) + fam.B_prime(t)) @ ut - prob.load(t)
        if np.any(d):
            worst = max(worst, float(np.sqrt(d @ dual_apply(fam.gram_V(t), d))))
    return worst


def temam_residual(prob, u, grid):
    """Accumulated form: ``d/dt l(t; u, phi_t v0) - <f - A u - Lambda u + M u, phi_t v0>``.

    Evaluated for all coordinate directions ``v0`` at once, at interior nodes.
    """
    fam = prob.fam
    worst = 0.0
    for t in grid.nodes[1:-1]:
        lhs = fd_derivative(lambda s: prob.L_B(s) @ u(s), t, 0.0, fam.T, fam.fd_step)
        ut = u(t)
        rhs = prob.load(t) - prob.A(t) @ ut - fam.B_prime(t) @ ut + m_form(prob, t) @ ut
        d = lhs - rhs
        if np.any(d):
            worst = max(worst, float(np.sqrt(d @ dual_apply(fam.gram_V(t), d))))
    return worst
