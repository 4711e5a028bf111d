"""Shipped compatible pairs and problems.

* ``static-circle``: Fourier modes on the unit circle, heat equation.
* ``weighted-Rn``: a fixed space with a time-dependent weight.
* ``evolving-circle``: heat equation on a circle of radius ``R(t)`` moving
  with its normal (dilation) velocity; the ``u div w`` term becomes ``Lambda``.
* ``moving-interval-fem``: P1 hat functions on ``[0, g(t)]`` transported by
  the affine map ``x = g(t) xi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .problem import ParabolicProblem
from .space import SpaceFamily
from .trajectories import Trajectory

NAMES = ("static-circle", "weighted-Rn", "evolving-circle", "moving-interval-fem")
PROFILE_MIN = 0.05


@dataclass(frozen=True)
class Profile:
    """Named analytic scalar profile: ``affine`` is ``a + b t``, ``sinusoidal`` is
    ``a + b sin(omega t + phase)``."""

    kind: str = "affine"
    a: float = 1.0
    b: float = 0.0
    omega: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("affine", "sinusoidal"):
            raise ValueError(f"unknown profile {self.kind!r}")

    def __call__(self, t):
        if self.kind == "affine":
            return self.a + self.b * t
        return self.a + self.b * np.sin(self.omega * t + self.phase)

    def deriv(self, t):
        if self.kind == "affine":
            return self.b + 0.0 * t
        return self.b * self.omega * np.cos(self.omega * t + self.phase)

    def lower_bound(self, T):
        if self.kind == "affine":
            return min(self.a, self.a + self.b * T)
        return self.a - abs(self.b)


DEFAULTS = {
    "static-circle": dict(n=17, profile=Profile("affine", 1.0, 0.0)),
    "weighted-Rn": dict(n=4, profile=Profile("affine", 1.0, 1.0)),
    "evolving-circle": dict(n=17, profile=Profile("affine", 1.0, 0.5)),
    "moving-interval-fem": dict(n=9, profile=Profile("affine", 1.0, 0.5)),
}


@dataclass(frozen=True)
class InstanceSpec:
    name: str
    n: int | None = None
    T: float = 1.0
    profile: Profile | None = None
    params: dict = field(default_factory=dict)

    def resolved(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown instance {self.name!r}; choose from {', '.join(NAMES)}")
        d = DEFAULTS[self.name]
        n = d["n"] if self.n is None else int(self.n)
        prof = d["profile"] if self.profile is None else self.profile
        if n < 1 or (self.name == "moving-interval-fem" and n < 2):
            raise ValueError(f"dimension {n} too small for {self.name}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.name != "static-circle" and prof.lower_bound(self.T) < PROFILE_MIN:
            raise ValueError(f"profile drops below {PROFILE_MIN} on [0, {self.T}]")
        return n, prof


def wavenumbers(n):
    """Wavenumber of each Fourier coordinate: ``1, cos t, sin t, cos 2t, ...``."""
    return (np.arange(n) + 1) // 2


def circle_mass(n):
    """``Pi = diag(2 pi, pi, pi, ...)``, the Gram matrix of the modes on the unit circle."""
    d = np.full(n, np.pi)
    d[0] = 2 * np.pi
    return np.diag(d)


def fourier_mode(j, theta):
    k = (j + 1) // 2
    if j == 0:
        return np.ones_like(theta)
    return np.cos(k * theta) if j % 2 == 1 else np.sin(k * theta)


def p1_matrices(n):
    """Reference P1 mass and stiffness on ``[0, 1]`` with ``n`` nodes, two-point Gauss per element."""
    h = 1.0 / (n - 1)
    M = np.zeros((n, n))
    S = np.zeros((n, n))
    gx = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    for e in range(n - 1):
        for x in gx:
            s = 0.5 * (x + 1.0)
            phi = np.array([1.0 - s, s])
            dphi = np.array([-1.0, 1.0]) / h
            idx = [e, e + 1]
            w = 0.5 * h
            M[np.ix_(idx, idx)] += w * np.outer(phi, phi)
            S[np.ix_(idx, idx)] += w * np.outer(dphi, dphi)
    return M, S


def smooth_coefficients(n, name):
    if name in ("static-circle", "evolving-circle"):
        return np.exp(-wavenumbers(n).astype(float))
    if name == "moving-interval-fem":
        return np.cos(np.pi * np.linspace(0.0, 1.0, n))
    return np.ones(n) / np.sqrt(n)


def make_family(spec):
    n, prof = spec.resolved()
    T = float(spec.T)
    meta = {"profile": prof}
    if spec.name in ("static-circle", "evolving-circle"):
        Pi = circle_mass(n)
        k2 = np.diag(wavenumbers(n).astype(float) ** 2) @ Pi
        R = (lambda t: 1.0) if spec.name == "static-circle" else prof
        dR = (lambda t: 0.0) if spec.name == "static-circle" else prof.deriv
        meta.update(Pi=Pi, stiffness=k2, radius=R, radius_dot=dR)
        return SpaceFamily(
            n, T,
            B=lambda t: R(t) * Pi,
            K=lambda t: R(t) * Pi + k2 / R(t),
            B_dot=lambda t: dR(t) * Pi,
            name=spec.name, metadata=meta,
        )
    if spec.name == "weighted-Rn":
        G0 = np.eye(n)
        K0 = np.diag(1.0 + np.arange(n))
        meta.update(G0=G0, K0=K0, weight=prof)
        return SpaceFamily(
            n, T,
            B=lambda t: prof(t) * G0,
            K=lambda t: prof(t) * K0,
            B_dot=lambda t: prof.deriv(t) * G0,
            name=spec.name, metadata=meta,
        )
    M, S = p1_matrices(n)
    meta.update(mass_ref=M, stiffness_ref=S, nodes_ref=np.linspace(0.0, 1.0, n), endpoint=prof)
    # B' deliberately left to finite differences
    return SpaceFamily(
        n, T,
        B=lambda t: prof(t) * M,
        K=lambda t: prof(t) * M + S / prof(t),
        name=spec.name, metadata=meta,
    )


def make_instance(spec):
    """Build ``(SpaceFamily, ParabolicProblem)`` with ``f = 0`` and smooth ``u0``."""
    fam = make_family(spec)
    meta = fam.metadata
    n = fam.dim
    if spec.name in ("static-circle", "evolving-circle"):
        k2 = meta["stiffness"]
        R, dR = meta["radius"], meta["radius_dot"]
        A_s = lambda t: k2 / R(t)  # noqa: E731
        A_s_dot = lambda t: -dR(t) / R(t) ** 2 * k2  # noqa: E731
    elif spec.name == "weighted-Rn":
        w = meta["weight"]
        D = np.diag(np.arange(n, dtype=float))
        A_s = lambda t: w(t) * D  # noqa: E731
        A_s_dot = lambda t: w.deriv(t) * D  # noqa: E731
    else:
        g = meta["endpoint"]
        S = meta["stiffness_ref"]
        A_s = lambda t: S / g(t)  # noqa: E731
        A_s_dot = None
    prob = ParabolicProblem(
        fam=fam,
        A_s=A_s,
        A_s_dot=A_s_dot,
        f=Trajectory.zero(fam),
        u0=smooth_coefficients(n, spec.name),
        name=spec.name,
    )
    return fam, prob


def manufacture(spec_or_prob, u_exact):
    """Problem whose exact solution is ``u_exact``; ``f`` is ``L^2_H``-tagged.

    ``f_hat = B^{-1} (L_B u' + (A + B') u)`` so that the truncated system is
    satisfied exactly at the continuous level.
    """
    prob = spec_or_prob if isinstance(spec_or_prob, ParabolicProblem) else make_instance(spec_or_prob)[1]
    fam = prob.fam
    if np.asarray(u_exact._eval(0.0)).shape != (fam.dim,):
        raise DimensionError("exact solution is not supported within the instance's modes")
    if u_exact.smoothness == "C0":
        raise ValueError("manufactured solutions must be smooth")

    def f_hat(t):
        rhs = prob.L_B(t) @ u_exact.derivative_at(t) + (prob.A(t) + fam.B_prime(t)) @ u_exact(t)
        return np.linalg.solve(fam.gram_H(t), rhs)

    return prob.replace(f=Trajectory.from_function(fam, f_hat), u0=u_exact(0.0))


def standard_exact_solution(fam, n_active=None):
    """Smooth manufactured solution ``a_j(t) = c_j (1 + sin(2 t + j) / 2)``.

    Coefficients ``c_j`` decay geometrically in the wavenumber on the circle
    instances; only the first ``n_active`` coordinates are nonzero.
    """
    c = smooth_coefficients(fam.dim, fam.name)
    if n_active is not None:
        c = np.where(np.arange(fam.dim) < n_active, c, 0.0)
    ph = np.arange(fam.dim, dtype=float)
    return Trajectory.from_function(
        fam,
        lambda t: c * (1.0 + 0.5 * np.sin(2.0 * t + ph)),
        lambda t: c * np.cos(2.0 * t + ph),
    )
