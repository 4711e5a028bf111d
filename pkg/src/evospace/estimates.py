"""A priori bounds, energy balance, convergence tables and a discrete inf-sup diagnostic."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import BlowUpError, MemoryGuardError, PreconditionError
from .galerkin import GalerkinSolution, StepperConfig, solve
from .problem import m_form
from .space import TimeGrid
from .trajectories import Trajectory, l2_norm, sup_norm_H

REGULARITY_HYPOTHESIS = "f ∈ L^2_H and u_0 ∈ V_0"
STABILITY_SPREAD = 0.05
SUP_SLACK = 1.05
INFSUP_CAP = 4096


def thread_count(default=None):
    """Worker cap from ``EVOLVE_THREADS`` (at least 1)."""
    raw = os.environ.get("EVOLVE_THREADS")
    if raw is None:
        return default or min(4, os.cpu_count() or 1)
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fun, items, workers=None):
    """Order-preserving map; serial when one worker is requested."""
    items = list(items)
    workers = thread_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) < 2:
        return [fun(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fun, items))


@dataclass
class LedgerEntry:
    N: int
    M: int
    scheme: str
    init_mode: str
    f_tag: str
    uN_L2V: float
    uNdot_L2H: float
    uNdot_L2Vstar: float
    uN_sup_H: float
    u0_H0: float
    u0_V0: float
    f_L2Vstar: float
    f_L2H: float
    energy_residual: float

    @property
    def ratio_uN(self):
        return _ratio(self.uN_L2V, self.u0_H0 + self.f_L2Vstar)

    @property
    def ratio_sup(self):
        return _ratio(self.uN_sup_H, self.u0_H0 + self.f_L2Vstar)

    @property
    def ratio_dotuN(self):
        return _ratio(self.uNdot_L2H, self.u0_V0 + self.f_L2H)

    def row(self):
        out = asdict(self)
        out.update(ratio_uN=self.ratio_uN, ratio_sup=self.ratio_sup, ratio_dotuN=self.ratio_dotuN)
        return out


def _ratio(num, den):
    if den == 0:
        return 0.0 if num == 0 else np.inf
    return num / den


@dataclass
class EstimateLedger:
    entries: list = field(default_factory=list)

    def add(self, entry):
        vals = [v for v in asdict(entry).values() if isinstance(v, float)]
        finite = [v for k, v in asdict(entry).items() if isinstance(v, float) and k != "f_L2H"]
        if not all(np.isfinite(finite)) or any(v < 0 for v in vals if np.isfinite(v)):
            raise BlowUpError(f"non-finite or negative norm in ledger entry N={entry.N}")
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def columns(self):
        return list(self.entries[0].row().keys()) if self.entries else []

    def rows(self):
        return [e.row() for e in self.entries]


def data_norms(prob, grid):
    """``(|u0|_H0, |u0|_V0, |f|_{L2 V*}, |f|_{L2 H})``; the last is ``nan`` for dual data."""
    fam = prob.fam
    u0 = prob.u0
    h0 = float(np.sqrt(u0 @ fam.gram_H0 @ u0))
    v0 = float(np.sqrt(u0 @ fam.gram_V(0.0) @ u0))
    fv = l2_norm(prob.f, "Vstar", grid)
    fh = l2_norm(prob.f, "H", grid) if prob.f.kind == "state" else float("nan")
    return h0, v0, fv, fh


def ledger_entry(prob, sol, grid=None):
    """Measure one Galerkin run."""
    grid = grid or sol.grid
    u, du = sol
    h0, v0, fv, fh = data_norms(prob, grid)
    return LedgerEntry(
        N=sol.N, M=len(sol.nodes) - 1, scheme=sol.scheme, init_mode=sol.init_mode, f_tag=prob.f_tag,
        uN_L2V=l2_norm(u, "V", grid),
        uNdot_L2H=l2_norm(du, "H", grid),
        uNdot_L2Vstar=l2_norm(du, "Vstar", grid),
        uN_sup_H=sup_norm_H(u, grid),
        u0_H0=h0, u0_V0=v0, f_L2Vstar=fv, f_L2H=fh,
        energy_residual=energy_identity_residual(prob, sol),
    )


def require_regularity_data(prob, init_mode):
    if prob.f_tag != "H":
        raise PreconditionError(
            f"u_N' estimate needs {REGULARITY_HYPOTHESIS}: the load is only tagged L^2_V*"
        )
    if init_mode != "truncation":
        raise PreconditionError(
            f"u_N' estimate needs {REGULARITY_HYPOTHESIS} with V0-truncated initial data "
            f"(got init_mode={init_mode!r})"
        )


def build_ledger(prob, N_list, stepper=None, init_mode="projection", regularity=False, workers=None):
    """Solve for every ``N`` and record the norms.

    With ``regularity=True`` the data hypotheses of the ``u_N'`` bound are
    checked before any solve.
    """
    stepper = stepper or StepperConfig()
    if regularity:
        require_regularity_data(prob, init_mode)

    def one(N):
        sol = solve(prob, N, stepper, init_mode=init_mode)
        return ledger_entry(prob, sol)

    ledger = EstimateLedger()
    for entry in parallel_map(one, N_list, workers):
        ledger.add(entry)
    return ledger


@dataclass
class BoundednessReport:
    """Ratio sequence in ``N`` with its finite-size boundedness verdict."""

    quantity: str
    N: list
    ratios: list
    spread: float
    sup_over_last: float
    passed: bool

    def rows(self):
        return [{"quantity": self.quantity, "N": n, "ratio": r} for n, r in zip(self.N, self.ratios)]


def bounded_in_N(N, ratios, quantity):
    """Last-three spread at most 5 percent and sup at most 1.05 times the value at the largest ``N``."""
    order = np.argsort(N)
    N = [int(N[i]) for i in order]
    r = np.array([ratios[i] for i in order], dtype=float)
    if not np.all(np.isfinite(r)):
        raise BlowUpError(f"non-finite {quantity} ratio")
    if np.all(r == 0):
        return BoundednessReport(quantity, N, r.tolist(), 0.0, 1.0, True)
    tail = r[-3:]
    spread = float((tail.max() - tail.min()) / tail.max())
    sup_over_last = float(r.max() / r[-1]) if r[-1] > 0 else np.inf
    ok = spread <= STABILITY_SPREAD and sup_over_last <= SUP_SLACK
    return BoundednessReport(quantity, N, r.tolist(), spread, sup_over_last, bool(ok))


def _distinct_N(ledger):
    Ns = sorted({e.N for e in ledger})
    if len(Ns) < 3:
        raise PreconditionError("a boundedness check needs at least three values of N")
    return Ns


def apriori_uN(ledger):
    """Boundedness in ``N`` of ``|u_N|_{L2 V} / (|u0|_H0 + |f|_{L2 V*})``."""
    _distinct_N(ledger)
    return bounded_in_N([e.N for e in ledger], [e.ratio_uN for e in ledger], "uN_L2V")


def apriori_sup(ledger):
    """Boundedness in ``N`` of ``max_t |u_N(t)|_H / (|u0|_H0 + |f|_{L2 V*})``."""
    _distinct_N(ledger)
    return bounded_in_N([e.N for e in ledger], [e.ratio_sup for e in ledger], "uN_sup_H")


def apriori_dotuN(ledger):
    """Boundedness in ``N`` of ``|u_N'|_{L2 H} / (|u0|_V0 + |f|_{L2 H})``."""
    _distinct_N(ledger)
    for e in ledger:
        if e.f_tag != "H":
            raise PreconditionError(f"u_N' estimate needs {REGULARITY_HYPOTHESIS}: the load is only tagged L^2_V*")
        if e.init_mode != "truncation":
            raise PreconditionError(f"u_N' estimate needs {REGULARITY_HYPOTHESIS} with V0-truncated initial data")
    return bounded_in_N([e.N for e in ledger], [e.ratio_dotuN for e in ledger], "uNdot_L2H")


def energy_identity_residual(prob, sol, grid=None):
    """Normalized defect of the integrated energy balance.

    ``1/2 l(T; u, u) - 1/2 l(0; u, u) + int (a + lambda - m/2)(u, u) - int <f, u>``
    with ``u`` the spline interpolant of the nodal solution, divided by the
    sum of the magnitudes of its terms.
    """
    fam = prob.fam
    grid = grid or sol.grid
    u = sol.u
    pts, wts = grid.quadrature()
    vals = u.sample(pts)
    dissip = np.empty(len(pts))
    work = np.empty(len(pts))
    for i, (t, y) in enumerate(zip(pts, vals)):
        Q = prob.A(t) + fam.B_prime(t) - 0.5 * m_form(prob, t)
        dissip[i] = y @ Q @ y
        work[i] = prob.load(t) @ y
    uT, u0 = u(fam.T), u(0.0)
    eT = 0.5 * uT @ prob.L_B(fam.T) @ uT
    e0 = 0.5 * u0 @ prob.L_B(0.0) @ u0
    total = eT - e0 + wts @ dissip - wts @ work
    scale = abs(eT) + abs(e0) + wts @ np.abs(dissip) + wts @ np.abs(work)
    return float(abs(total) / scale) if scale > 0 else 0.0


@dataclass
class ConvergenceTable:
    """Errors ``e(N, M) = |u_N - u_ref|_{L2 V}`` and fitted temporal orders."""

    scheme: str
    N_list: list
    M_list: list
    errors: np.ndarray
    orders: dict
    pairwise: dict

    def rows(self):
        out = []
        for i, N in enumerate(self.N_list):
            for j, M in enumerate(self.M_list):
                out.append({"N": N, "M": M, "error": float(self.errors[i, j])})
        return out

    def floor(self, N):
        return float(np.min(self.errors[self.N_list.index(N)]))


def fitted_order(M_list, errs):
    """Least-squares slope of ``-log e`` against ``log M``."""
    M_list, errs = np.asarray(M_list, dtype=float), np.asarray(errs, dtype=float)
    if len(M_list) < 2 or np.any(errs <= 0):
        return float("nan")
    return float(-np.polyfit(np.log(M_list), np.log(errs), 1)[0])


def convergence_study(prob, N_list, M_list, reference, scheme="implicit-midpoint",
                      init_mode="projection", workers=None):
    """Error table against a closed-form trajectory or a finer Galerkin solve.

    A :class:`GalerkinSolution` reference must use ``N_ref >= 2 max N`` and
    ``M_ref >= 4 max M``, or it is refused.
    """
    N_list, M_list = [int(n) for n in N_list], [int(m) for m in M_list]
    if not N_list or not M_list:
        raise ValueError("N_list and M_list must be nonempty")
    if isinstance(reference, GalerkinSolution):
        M_ref = len(reference.nodes) - 1
        if reference.N < 2 * max(N_list) and reference.N < prob.fam.dim:
            raise PreconditionError(f"reference N={reference.N} is coarser than 2 x {max(N_list)}")
        if M_ref < 4 * max(M_list):
            raise PreconditionError(f"reference M={M_ref} is coarser than 4 x {max(M_list)}")
        ref = reference.u
    elif isinstance(reference, Trajectory):
        ref = reference
    else:
        raise TypeError("reference must be a Trajectory or a GalerkinSolution")
    eval_grid = TimeGrid.uniform(prob.fam.T, max(M_list))

    def cell(nm):
        N, M = nm
        sol = solve(prob, N, StepperConfig(scheme, M), init_mode=init_mode)
        return l2_norm(sol.u - ref, "V", eval_grid)

    cells = [(N, M) for N in N_list for M in M_list]
    errs = np.array(parallel_map(cell, cells, workers)).reshape(len(N_list), len(M_list))
    orders = {N: fitted_order(M_list, errs[i]) for i, N in enumerate(N_list)}
    pairwise = {
        N: [float(np.log(errs[i, j] / errs[i, j + 1]) / np.log(M_list[j + 1] / M_list[j]))
            if errs[i, j + 1] > 0 else float("nan") for j in range(len(M_list) - 1)]
        for i, N in enumerate(N_list)
    }
    return ConvergenceTable(scheme, N_list, M_list, errs, orders, pairwise)


def _spd_factor(G, label):
    try:
        return np.linalg.cholesky(0.5 * (G + G.T))
    except np.linalg.LinAlgError as exc:
        raise PreconditionError(f"{label} Gram matrix is not SPD") from exc


def inf_sup_estimate(prob, N, grid, gamma=0.0, cap=INFSUP_CAP, trial_norm="average"):
    """Smallest singular value of the norm-weighted space-time Galerkin operator.

    Trial functions are continuous piecewise linear in time with zero
    initial value, measured in ``|w|_{L2 V} + |w'|_{L2 V*}``; test functions
    are piecewise constant in ``L2 V``.  The weight ``exp(-gamma t)`` enters
    as the shift ``A + Lambda + gamma L``.

    ``trial_norm="average"`` measures the ``L2 V`` part on cell averages,
    which keeps the bound uniform in the step size for stiff spectra;
    ``"p1"`` uses the exact piecewise-linear mass and is only stable while
    the step resolves the stiffest mode.
    """
    if trial_norm not in ("average", "p1"):
        raise ValueError(f"unknown trial norm {trial_norm!r}")
    fam = prob.fam
    N = int(N)
    if not 1 <= N <= fam.dim:
        raise ValueError(f"N={N} must lie in 1..{fam.dim}")
    M = grid.M
    if N * M > cap:
        raise MemoryGuardError(f"N*M = {N * M} exceeds the inf-sup cap {cap}")
    for t in grid.nodes:
        LB = prob.L_B(t)[:N, :N]
        low = sla.eigh(0.5 * (LB + LB.T), fam.gram_H(t)[:N, :N], eigvals_only=True)[0]
        if not low > 0:
            raise PreconditionError(f"l(t; ., .) is not coercive at t={t:g}; inf-sup assembly refused")
    D = np.zeros((N * M, N * M))
    GW = np.zeros_like(D)
    GY = np.zeros_like(D)
    p1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0 if trial_norm == "p1" else np.full((2, 2), 0.25)
    for k in range(M):
        dt = grid.nodes[k + 1] - grid.nodes[k]
        tm = 0.5 * (grid.nodes[k] + grid.nodes[k + 1])
        L = prob.L_B(tm)[:N, :N]
        C = (prob.A(tm) + fam.B_prime(tm))[:N, :N] + gamma * L
        B, K = fam.gram_H(tm)[:N, :N], fam.gram_V(tm)[:N, :N]
        Gd = B @ np.linalg.solve(K, B)
        rows = slice(k * N, (k + 1) * N)
        cur = slice(k * N, (k + 1) * N)
        D[rows, cur] += L + 0.5 * dt * C
        GY[rows, rows] += dt * K
        GW[cur, cur] += dt * p1[1, 1] * K + Gd / dt
        if k > 0:
            prev = slice((k - 1) * N, k * N)
            D[rows, prev] += -L + 0.5 * dt * C
            GW[prev, prev] += dt * p1[0, 0] * K + Gd / dt
            GW[prev, cur] += dt * p1[0, 1] * K - Gd / dt
            GW[cur, prev] += dt * p1[1, 0] * K - Gd / dt
    RW = _spd_factor(GW, "trial")
    RY = _spd_factor(GY, "test")
    X = sla.solve_triangular(RY, D, lower=True)
    X = sla.solve_triangular(RW, X.T, lower=True).T
    return float(np.linalg.svd(X, compute_uv=False)[-1])


@dataclass
class GammaSweep:
    gammas: np.ndarray
    sigmas: np.ndarray

    @property
    def gamma_star(self):
        return float(self.gammas[int(np.argmax(self.sigmas))])

    @property
    def sigma_star(self):
        return float(np.max(self.sigmas))


def gamma_sweep(prob, N, grid, gammas, workers=None):
    gammas = np.asarray(gammas, dtype=float)
    sig = parallel_map(lambda g: inf_sup_estimate(prob, N, grid, g), gammas, workers)
    return GammaSweep(gammas, np.array(sig))


@dataclass
class UniquenessReport:
    superposition_defect: float
    scaling_defect: float
    homogeneous_max: float

    @property
    def passed(self):
        return self.superposition_defect <= 1e-10 and self.scaling_defect <= 1e-10 and self.homogeneous_max == 0.0


def _random_load(fam, kind, rng):
    a, b, c = rng.standard_normal((3, fam.dim))
    return Trajectory.from_function(
        fam, lambda t: a + b * t + c * np.sin(3.0 * t), lambda t: b + 3.0 * c * np.cos(3.0 * t), kind=kind)


def uniqueness_check(prob, stepper=None, N=None, seed=0):
    """Superposition, scaling and zero-data defects of the discrete solution map."""
    stepper = stepper or StepperConfig()
    fam = prob.fam
    N = fam.dim if N is None else N
    rng = np.random.default_rng(seed)
    other = prob.replace(u0=rng.standard_normal(fam.dim), f=_random_load(fam, prob.f.kind, rng))
    both = prob.replace(u0=prob.u0 + other.u0, f=prob.f + other.f)
    twice = prob.replace(u0=2.0 * prob.u0, f=prob.f * 2.0)
    zero = prob.replace(u0=np.zeros(fam.dim), f=Trajectory.zero(fam, prob.f.kind))
    U1 = solve(prob, N, stepper).coeffs
    U2 = solve(other, N, stepper).coeffs
    U12 = solve(both, N, stepper).coeffs
    U11 = solve(twice, N, stepper).coeffs
    U0 = solve(zero, N, stepper).coeffs
    scale = max(1.0, np.max(np.abs(U1)) + np.max(np.abs(U2)))
    return UniquenessReport(
        superposition_defect=float(np.max(np.abs(U12 - U1 - U2)) / scale),
        scaling_defect=float(np.max(np.abs(U11 - 2.0 * U1)) / max(1.0, 2.0 * np.max(np.abs(U1)))),
        homogeneous_max=float(np.max(np.abs(U0))),
    )
