import numpy as np
import pytest

from evospace.errors import MemoryGuardError, PreconditionError
from evospace.estimates import (
    REGULARITY_HYPOTHESIS,
    apriori_dotuN,
    apriori_sup,
    apriori_uN,
    bounded_in_N,
    build_ledger,
    convergence_study,
    energy_identity_residual,
    gamma_sweep,
    inf_sup_estimate,
    uniqueness_check,
)
from evospace.galerkin import StepperConfig, solve
from evospace.instances import InstanceSpec, make_instance, manufacture, standard_exact_solution
from evospace.problem import ParabolicProblem
from evospace.space import SpaceFamily, TimeGrid
from evospace.trajectories import Trajectory

from conftest import identity_family


def mode_one(name="static-circle", n=9):
    fam, prob = make_instance(InstanceSpec(name, n=n))
    u0 = np.zeros(n)
    u0[1] = 1.0
    return fam, prob.replace(u0=u0)


def test_trivial_data_gives_zero_ratios():
    fam, prob = make_instance(InstanceSpec("static-circle", n=9))
    zero = prob.replace(u0=np.zeros(9))
    led = build_ledger(zero, [2, 4, 8], StepperConfig(M=20), init_mode="truncation")
    rep = apriori_uN(led)
    assert rep.passed and rep.ratios == [0.0, 0.0, 0.0]
    assert apriori_dotuN(led).ratios == [0.0, 0.0, 0.0]


def test_apriori_uN_closed_form():
    fam, prob = mode_one()
    led = build_ledger(prob, [2, 4, 8], StepperConfig(M=400))
    expected = np.sqrt(np.pi * (1 - np.exp(-2))) / np.sqrt(np.pi)
    rep = apriori_uN(led)
    assert rep.passed
    np.testing.assert_allclose(rep.ratios, expected, rtol=1e-5)


def test_apriori_dotuN_closed_form():
    fam, prob = mode_one()
    led = build_ledger(prob.replace(f=Trajectory.zero(fam)), [2, 4, 8], StepperConfig(M=400),
                       init_mode="truncation", regularity=True)
    expected = np.sqrt(np.pi * (1 - np.exp(-2)) / 2) / np.sqrt(2 * np.pi)
    rep = apriori_dotuN(led)
    assert rep.passed
    np.testing.assert_allclose(rep.ratios, expected, rtol=1e-5)


def test_dotuN_refuses_dual_load():
    fam, prob = make_instance(InstanceSpec("evolving-circle"))
    dual = prob.replace(f=Trajectory.constant(fam, np.ones(fam.dim), kind="dual"))
    with pytest.raises(PreconditionError, match="f ∈ L\\^2_H and u_0 ∈ V_0"):
        build_ledger(dual, [4, 8, 16], init_mode="truncation", regularity=True)
    led = build_ledger(dual, [4, 8, 16], StepperConfig(M=20), init_mode="truncation")
    with pytest.raises(PreconditionError) as exc:
        apriori_dotuN(led)
    assert REGULARITY_HYPOTHESIS in str(exc.value)


def test_boundedness_needs_three_levels():
    fam, prob = mode_one()
    led = build_ledger(prob, [2, 4], StepperConfig(M=10))
    with pytest.raises(PreconditionError):
        apriori_uN(led)


def test_bounded_rule():
    assert bounded_in_N([1, 2, 3, 4], [0.5, 1.0, 1.01, 1.02], "x").passed
    assert not bounded_in_N([1, 2, 3], [1.0, 1.5, 2.0], "x").passed
    assert not bounded_in_N([1, 2, 3, 4], [2.0, 1.0, 1.0, 1.0], "x").passed


def test_sup_estimate_stable_in_N():
    fam, prob = make_instance(InstanceSpec("evolving-circle", n=33))
    led = build_ledger(manufacture(prob, standard_exact_solution(fam)), [4, 8, 16, 32], StepperConfig(M=50))
    assert apriori_sup(led).passed
    for e in led:
        assert all(np.isfinite(v) and v >= 0 for k, v in e.row().items() if isinstance(v, float))


def test_energy_residual_zero_solution():
    fam, prob = make_instance(InstanceSpec("evolving-circle"))
    sol = solve(prob.replace(u0=np.zeros(fam.dim)), fam.dim, StepperConfig(M=10))
    assert energy_identity_residual(prob, sol) == 0.0


@pytest.mark.parametrize("scheme,order", [("implicit-midpoint", 2), ("backward-euler", 1)])
def test_energy_residual_order(scheme, order):
    fam, prob = mode_one()
    r = [energy_identity_residual(prob, solve(prob, 9, StepperConfig(scheme, M))) for M in (100, 200, 400)]
    rates = np.log2(np.array(r[:-1]) / r[1:])
    assert np.all(np.abs(rates - order) <= 0.1)


def test_energy_evolving_mass_mode():
    fam, prob = make_instance(InstanceSpec("evolving-circle"))
    u0 = np.zeros(fam.dim)
    u0[0] = 1.0
    p = prob.replace(u0=u0)
    for M in (50, 100):
        assert energy_identity_residual(p, solve(p, fam.dim, StepperConfig(M=M))) <= 2.0 * (1.0 / M) ** 2


def test_convergence_spatially_exact_beyond_data_modes():
    fam, prob = make_instance(InstanceSpec("evolving-circle"))
    ue = standard_exact_solution(fam, n_active=4)
    tab = convergence_study(manufacture(prob, ue), [4, 8, 17], [50, 100], ue)
    np.testing.assert_allclose(tab.errors[0], tab.errors[1], rtol=1e-8)
    np.testing.assert_allclose(tab.errors[0], tab.errors[2], rtol=1e-8)


def test_convergence_refuses_coarse_reference():
    fam, prob = make_instance(InstanceSpec("evolving-circle", n=33))
    coarse = solve(prob, 8, StepperConfig(M=400))
    with pytest.raises(PreconditionError):
        convergence_study(prob, [8], [100], coarse)
    few_steps = solve(prob, 33, StepperConfig(M=200))
    with pytest.raises(PreconditionError):
        convergence_study(prob, [8], [100], few_steps)


def test_convergence_against_fine_solve():
    fam, prob = make_instance(InstanceSpec("evolving-circle"))
    ref = solve(prob, fam.dim, StepperConfig(M=1600))
    tab = convergence_study(prob, [fam.dim], [100, 200, 400], ref)
    assert tab.orders[fam.dim] == pytest.approx(2.0, abs=0.1)


def test_inf_sup_identity_family_stable():
    fam = identity_family(3)
    prob = ParabolicProblem(fam=fam, A_s=fam.K, f=Trajectory.zero(fam), u0=np.zeros(3))
    s1 = inf_sup_estimate(prob, 3, TimeGrid.uniform(1.0, 8))
    s2 = inf_sup_estimate(prob, 3, TimeGrid.uniform(1.0, 16))
    assert s1 > 0 and abs(s2 - s1) <= 0.1 * s1


def test_inf_sup_gamma_sweep_has_positive_optimum():
    fam, prob = make_instance(InstanceSpec("evolving-circle"))
    sw = gamma_sweep(prob, 8, TimeGrid.uniform(1.0, 16), [0.0, 0.5, 1.0, 2.0, 4.0])
    assert sw.gamma_star > 0 and sw.sigma_star > sw.sigmas[0]


def test_inf_sup_rejects_noncoercive_L():
    fam = identity_family(2)
    prob = ParabolicProblem(fam=fam, A_s=lambda t: np.zeros((2, 2)), f=Trajectory.zero(fam), u0=np.zeros(2),
                            L_form=lambda t: np.zeros((2, 2)))
    with pytest.raises(PreconditionError):
        inf_sup_estimate(prob, 2, TimeGrid.uniform(1.0, 4))


def test_inf_sup_memory_guard():
    fam, prob = make_instance(InstanceSpec("static-circle"))
    with pytest.raises(MemoryGuardError):
        inf_sup_estimate(prob, 17, TimeGrid.uniform(1.0, 400))


def test_inf_sup_scale_invariant():
    fam, prob = make_instance(InstanceSpec("moving-interval-fem"))
    c = 3.7
    scaled_fam = SpaceFamily(fam.dim, fam.T, B=lambda t: c * fam.B(t), K=lambda t: c * fam.K(t))
    scaled = ParabolicProblem(fam=scaled_fam, A_s=lambda t: c * prob.A_s(t), f=Trajectory.zero(scaled_fam),
                              u0=prob.u0)
    grid = TimeGrid.uniform(1.0, 8)
    a, b = inf_sup_estimate(prob, 6, grid), inf_sup_estimate(scaled, 6, grid)
    assert abs(a - b) <= 1e-8 * a


def test_uniqueness(instance):
    fam, prob = instance
    rep = uniqueness_check(prob, StepperConfig(M=20), seed=3)
    assert rep.passed
    assert rep.homogeneous_max == 0.0
