import numpy as np
import pytest

from evospace.errors import PreconditionError
from evospace.instances import InstanceSpec, Profile, make_instance, manufacture, standard_exact_solution
from evospace.problem import (
    ParabolicProblem,
    a7_residual,
    garding_constants,
    m_form,
    temam_residual,
    validate_A,
    validate_L,
    weak_form_residual,
)
from evospace.space import TimeGrid, dual_norm_Vstar
from evospace.trajectories import Trajectory

from conftest import identity_family, scalar_family


def simple_problem(fam, A_s=None, **kw):
    A_s = A_s or fam.K
    return ParabolicProblem(fam=fam, A_s=A_s, f=Trajectory.zero(fam), u0=np.ones(fam.dim), **kw)


def test_m_form_examples():
    fam = identity_family(2)
    const = simple_problem(fam, L_form=lambda t: 3 * np.eye(2))
    np.testing.assert_allclose(m_form(const, 0.5), 0.0, atol=1e-9)
    lin = simple_problem(fam, L_form=lambda t: (1 + t) * np.eye(2))
    np.testing.assert_allclose(m_form(lin, 0.5), np.eye(2), atol=1e-9)
    w = scalar_family(lambda t: 2 + np.sin(t), lambda t: np.cos(t), n=2)
    idl = simple_problem(w)
    np.testing.assert_array_equal(m_form(idl, 0.3), w.B_prime(0.3))


def test_m_form_symmetric():
    fam = identity_family(2)
    prob = simple_problem(fam, L_form=lambda t: np.array([[2 + t, np.sin(t)], [np.sin(t), 3.0]]))
    m = m_form(prob, 0.4)
    assert np.max(np.abs(m - m.T)) <= 1e-12


def test_validate_L_identity(instance, grid):
    _, prob = instance
    rep = validate_L(prob, grid)
    assert rep.passed
    assert rep["L3"].constants["C3"] == pytest.approx(1.0, abs=1e-10)
    assert rep["L4"].constants["C4"] == pytest.approx(1.0, abs=1e-10)
    assert rep.ids() == [f"L{i}" for i in range(1, 9)]


def test_validate_L_scaled(grid):
    fam, prob = make_instance(InstanceSpec("weighted-Rn"))
    twice = prob.replace(L_form=lambda t: 2 * fam.gram_H(t))
    rep = validate_L(twice, grid)
    assert rep["L3"].constants["C3"] == pytest.approx(2.0, abs=1e-10)
    assert rep["L4"].constants["C4"] == pytest.approx(2.0, abs=1e-10)


def test_validate_L_indefinite(grid):
    fam = identity_family(2)
    prob = simple_problem(fam, L_form=lambda t: np.diag([1.0, 0.6 - t]))
    rep = validate_L(prob, grid)
    assert not rep["L4"].passed
    assert rep["L4"].worst_t == pytest.approx(1.0)


def test_validate_A_stiffness_equals_K(grid):
    fam = scalar_family(lambda t: 1 + t, lambda t: 1.0, n=3, stiff=lambda t: (1 + t) * np.diag([1.0, 2.0, 3.0]))
    prob = simple_problem(fam)
    c1, c2, _ = garding_constants(prob, grid)
    assert c1 == pytest.approx(1.0) and c2 == pytest.approx(0.0, abs=1e-12)
    assert validate_A(prob, grid)["A6"].passed


def test_validate_A_evolving_circle(grid):
    _, prob = make_instance(InstanceSpec("evolving-circle"))
    rep = validate_A(prob, grid)
    assert rep.passed
    assert rep["A7"].constants["residual"] <= 1e-8


def test_A4_violation_detected(grid):
    fam, prob = make_instance(InstanceSpec("static-circle"))
    stiff = fam.metadata["stiffness"]
    bad = prob.replace(A_n=lambda t: stiff)
    rep = validate_A(bad, grid)
    assert not rep["A4"].passed


def test_garding_inequality_holds(instance, grid):
    fam, prob = instance
    c1, c2, _ = garding_constants(prob, grid)
    rng = np.random.default_rng(0)
    for t in grid.nodes:
        for v in rng.standard_normal((5, fam.dim)):
            lhs = v @ prob.A(t) @ v
            assert lhs >= c1 * v @ fam.gram_V(t) @ v - c2 * v @ fam.gram_H(t) @ v - 1e-9 * abs(lhs)


def test_a7_fd_paths_consistent():
    fam, prob = make_instance(InstanceSpec("evolving-circle", profile=Profile("sinusoidal", 1.0, 0.3, 2.0)))
    fd = prob.replace(A_s_dot=None)
    grid = TimeGrid.uniform(1.0, 6)
    errs = [a7_residual(fd, grid, step=h, richardson=False)[0] for h in (1e-2, 5e-3)]
    assert np.log2(errs[0] / errs[1]) >= 1.9
    assert a7_residual(prob, grid)[0] <= 1e-8


def test_nonsymmetric_A_needs_r_form(grid):
    fam = identity_family(2)
    prob = simple_problem(fam, A_s=lambda t: np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(PreconditionError):
        prob.r(0.5, np.ones(2))
    rep = validate_A(prob, grid)
    assert not rep["A7"].passed


def test_weak_form_residual_examples(grid):
    fam, prob = make_instance(InstanceSpec("evolving-circle"))
    ue = standard_exact_solution(fam)
    mp = manufacture(prob, ue)
    assert weak_form_residual(mp, ue, grid) <= 1e-10
    zero = Trajectory.zero(fam)
    assert weak_form_residual(prob.replace(u0=np.zeros(fam.dim)), zero, grid) == 0.0
    g = np.linspace(1.0, 2.0, fam.dim)
    loaded = prob.replace(f=Trajectory.constant(fam, g, kind="dual"))
    expected = max(dual_norm_Vstar(fam, t, g) for t in grid.nodes)
    assert weak_form_residual(loaded, zero, grid) == pytest.approx(expected, rel=1e-12)


def test_temam_residual_small_for_manufactured(grid):
    fam, prob = make_instance(InstanceSpec("moving-interval-fem"))
    ue = standard_exact_solution(fam)
    assert temam_residual(manufacture(prob, ue), ue, grid) <= 1e-6


def test_problem_rejects_both_derivative_sources():
    fam = identity_family(2)
    with pytest.raises(ValueError):
        simple_problem(fam, A_s_dot=lambda t: 0 * np.eye(2), r_form=lambda t, y: 0.0)
