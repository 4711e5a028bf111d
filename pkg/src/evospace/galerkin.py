"""Transported-basis Galerkin systems and their time integration.

With ``chi_j^t = phi_t e_j`` the basis has zero material derivative, so the
Galerkin equations reduce to the matrix ODE

    L(t) u' + (A(t) + Lambda(t)) u = F(t),   u(0) = u_0N,

whose matrices are the leading ``N x N`` blocks of the pullback forms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import BlowUpError, PreconditionError, SingularGramError
from .space import TimeGrid
from .trajectories import Trajectory, strong_material_derivative

SCHEMES = ("implicit-midpoint", "backward-euler")
INIT_MODES = ("truncation", "projection")


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "implicit-midpoint"
    M: int = 100
    tol: float = 1e-12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def transported_basis_check(fam, grid):
    """Largest material derivative of any transported basis function; zero by construction."""
    worst = 0.0
    basis = [Trajectory.constant(fam, e) for e in np.eye(fam.dim)]
    combo = Trajectory.constant(fam, np.arange(1.0, fam.dim + 1.0))
    for chi in basis + [combo]:
        d = strong_material_derivative(chi).sample(grid.nodes)
        worst = max(worst, float(np.max(np.abs(d))))
    return worst


def _check_N(fam, N):
    if int(N) != N or not 1 <= N <= fam.dim:
        raise ValueError(f"N={N} must lie in 1..{fam.dim}")
    return int(N)


def project(fam, t, N, u_hat):
    """Coefficients of the ``H(t)``-orthogonal projection onto ``V_N(t)``."""
    N = _check_N(fam, N)
    u = fam.check_vector(u_hat, "u_hat")
    if not np.any(u[N:]):
        # B_NN c = B_NN u_N has the exact solution c = u_N
        return u[:N].copy()
    B = fam.gram_H(t)
    try:
        cf = sla.cho_factor(B[:N, :N])
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(f"B_NN({t:g}) is singular") from exc
    return sla.cho_solve(cf, (B @ u)[:N])


def pad(c, n):
    out = np.zeros(n)
    out[: len(c)] = c
    return out


def is_V0_orthogonal(fam, tol=1e-12):
    K0 = fam.gram_V(0.0)
    off = K0 - np.diag(np.diag(K0))
    return bool(np.max(np.abs(off)) <= tol * np.max(np.abs(K0)))


def build_initial_data(prob, N, mode="projection"):
    """``u_0N``: V0-orthogonal truncation (``"truncation"``) or ``P_N^0 u_0`` (``"projection"``)."""
    fam = prob.fam
    N = _check_N(fam, N)
    if mode == "truncation":
        if not is_V0_orthogonal(fam):
            raise PreconditionError(
                f"{fam.name}: mode hierarchy is not V0-orthogonal; truncation initial data "
                "needs a basis orthogonal in V_0 (use mode='projection')"
            )
        return prob.u0[:N].copy()
    if mode == "projection":
        return project(fam, 0.0, N, prob.u0)
    raise ValueError(f"unknown initial-data mode {mode!r}")


def initial_data_constants(prob, N, mode="projection"):
    """Measured ratios behind the basis assumptions for one ``N``.

    Returns ``{"B1": |u_0N - u_0|_V0, "B2": |u_0N|_H0 / |u_0|_H0, "B3": |u_0N|_V0 / |u_0|_V0}``.
    """
    fam = prob.fam
    u0 = prob.u0
    uN = pad(build_initial_data(prob, N, mode), fam.dim)
    B0, K0 = fam.gram_H0, fam.gram_V(0.0)
    nh, nv = np.sqrt(u0 @ B0 @ u0), np.sqrt(u0 @ K0 @ u0)
    d = uN - u0
    return {
        "B1": float(np.sqrt(d @ K0 @ d)),
        "B2": float(np.sqrt(uN @ B0 @ uN) / nh) if nh > 0 else 0.0,
        "B3": float(np.sqrt(uN @ K0 @ uN) / nv) if nv > 0 else 0.0,
    }


def assemble(prob, N, t):
    """``(L, A, Lambda, F)`` of the Galerkin system at time ``t``."""
    fam = prob.fam
    N = _check_N(fam, N)
    return (
        prob.L_B(t)[:N, :N],
        prob.A(t)[:N, :N],
        fam.B_prime(t)[:N, :N],
        prob.load(t)[:N],
    )


class GalerkinSystem:
    """Truncated matrix paths and initial vector for one truncation level."""

    def __init__(self, prob, N, init_mode="projection"):
        self.prob = prob
        self.N = _check_N(prob.fam, N)
        if init_mode not in INIT_MODES:
            raise ValueError(f"unknown initial-data mode {init_mode!r}")
        self.init_mode = init_mode
        self.u0N = build_initial_data(prob, self.N, init_mode)

    def matrices(self, t):
        return assemble(self.prob, self.N, t)


@dataclass
class GalerkinSolution:
    """Nodal coefficients plus the scheme's stage slopes.

    ``u_dot`` is the piecewise-constant path of stage slopes (the exact
    derivative of the piecewise-linear interpolant of the nodal values).
    """

    fam: object
    N: int
    scheme: str
    nodes: np.ndarray
    coeffs: np.ndarray
    stage_times: np.ndarray
    stage_slopes: np.ndarray
    residuals: np.ndarray
    init_mode: str

    @property
    def grid(self):
        return TimeGrid(self.nodes)

    @property
    def padded(self):
        out = np.zeros((self.coeffs.shape[0], self.fam.dim))
        out[:, : self.N] = self.coeffs
        return out

    @property
    def u(self):
        return Trajectory.from_nodes(self.fam, self.nodes, self.padded)

    @property
    def u_dot(self):
        slopes = np.zeros((self.stage_slopes.shape[0], self.fam.dim))
        slopes[:, : self.N] = self.stage_slopes
        return Trajectory.piecewise_constant(self.fam, self.nodes, slopes)

    @property
    def final(self):
        return self.coeffs[-1]

    @property
    def discrete_residual(self):
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    def __iter__(self):
        yield self.u
        yield self.u_dot


def solve(prob, N, stepper=None, grid=None, init_mode="projection"):
    """Integrate the Galerkin system with a one-step implicit scheme.

    Implicit midpoint evaluates all matrices at cell midpoints; backward
    Euler at the right end of each cell.  The returned residuals are the
    relative defects of each step's linear system.
    """
    stepper = stepper or StepperConfig()
    fam = prob.fam
    system = GalerkinSystem(prob, N, init_mode)
    N = system.N
    if grid is None:
        grid = TimeGrid.uniform(fam.T, stepper.M)
    elif grid.M != stepper.M:
        raise ValueError(f"grid has {grid.M} steps but the stepper asks for {stepper.M}")
    if abs(grid.T - fam.T) > 1e-12 * max(1.0, fam.T):
        raise ValueError("grid must end at the family's horizon")
    nodes = grid.nodes
    M = grid.M
    U = np.zeros((M + 1, N))
    U[0] = system.u0N
    slopes = np.zeros((M, N))
    resid = np.zeros(M)
    midpoint = stepper.scheme == "implicit-midpoint"
    stage_times = grid.midpoints if midpoint else nodes[1:].copy()
    # overflow surfaces as non-finite values and is reported as a blow-up
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(M):
            dt = nodes[k + 1] - nodes[k]
            ts = stage_times[k]
            L, A, Lam, F = system.matrices(ts)
            try:
                np.linalg.cholesky(0.5 * (L + L.T))
            except np.linalg.LinAlgError as exc:
                raise SingularGramError(f"Galerkin mass matrix L is not SPD at t={ts:g} (step {k})") from exc
            C = A + Lam
            if midpoint:
                lhs = L / dt + 0.5 * C
                rhs = F + (L / dt - 0.5 * C) @ U[k]
            else:
                lhs = L / dt + C
                rhs = F + (L / dt) @ U[k]
            U[k + 1] = sla.solve(lhs, rhs)
            s = (U[k + 1] - U[k]) / dt
            stage_u = 0.5 * (U[k] + U[k + 1]) if midpoint else U[k + 1]
            r = L @ s + C @ stage_u - F
            scale = np.max(np.abs(L @ s)) + np.max(np.abs(C @ stage_u)) + np.max(np.abs(F))
            if not (np.all(np.isfinite(U[k + 1])) and np.isfinite(scale)):
                raise BlowUpError(f"non-finite coefficients at step {k + 1} (t={nodes[k + 1]:g})", step=k + 1)
            slopes[k] = s
            resid[k] = np.max(np.abs(r)) / scale if scale > 0 else 0.0
    return GalerkinSolution(fam, N, stepper.scheme, nodes.copy(), U, stage_times, slopes, resid, init_mode)
