import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fockcool.dynamics import Cycle, Pulse, simulate
from fockcool.errors import NoFeasibleDetuning
from fockcool.protocol import (
    EMPTY_DURATION,
    FIG2_DURATION,
    SAFETY_BOUND,
    OptimizationProblem,
    PulseBounds,
    build_cycle,
    confining_detunings,
    default_problem,
    eta_hat_sq,
    optimize_sequence,
    scan_blue_detunings,
    seed_cycles,
    select_blue_detunings,
)
from fockcool.rates import PhysicalParams, emptying_rates

P5 = PhysicalParams(eta=5.0)


@pytest.mark.parametrize("eta,expected", [(1.0, 1), (1.5, 3), (5.0, 25), (1.1, 2), (0.0, 0), (0.3, 1)])
def test_eta_hat_sq(eta, expected):
    assert eta_hat_sq(eta) == expected


@pytest.mark.parametrize("eta,expected", [(1.0, [-2, -2]), (5.0, [-25, -26]), (0.3, [-2, -2]), (2.0, [-4, -5])])
def test_confining_detunings(eta, expected):
    assert confining_detunings(eta) == expected


@settings(max_examples=50, deadline=None)
@given(eta=st.floats(0.0, 1.4))
def test_clamp_binds_at_small_eta(eta):
    assert confining_detunings(eta)[0] == -2.0


def test_blue_selection_at_eta5():
    picks = select_blue_detunings(P5, (0.0, 26.0), count=2)
    assert set(picks) == {7.0, 9.0}
    for d in picks:
        g0, g1 = emptying_rates(d, P5, 1)
        assert 0.02 <= g0 / g1 <= 0.08
        assert g0 * EMPTY_DURATION <= SAFETY_BOUND


def test_blue_selection_infeasible_deep_lamb_dicke():
    with pytest.raises(NoFeasibleDetuning):
        select_blue_detunings(PhysicalParams(eta=0.1), (0.0, 26.0))
    # every candidate there has a ground-state rate comparable to level 1
    ratios = [c.ratio for c in scan_blue_detunings(PhysicalParams(eta=0.1), (1.0, 10.0))]
    assert min(ratios) > 0.5


def test_blue_selection_single_candidate():
    assert select_blue_detunings(P5, (7.0, 7.0), count=1) == [7.0]
    with pytest.raises(NoFeasibleDetuning):
        select_blue_detunings(P5, (7.0, 7.0), count=1, gamma1_floor=1.0)


def test_blue_selection_rejects_bad_range():
    with pytest.raises(ValueError):
        select_blue_detunings(P5, (5.0, 2.0))
    with pytest.raises(ValueError):
        select_blue_detunings(P5, (-5.0, -1.0))
    with pytest.raises(ValueError):
        select_blue_detunings(P5, count=0)


def test_fig3_schemes_exact():
    b = build_cycle("fig3b", 5.0)
    assert b.as_list() == [(-24.0, 0.6), (-25.0, 0.6), (7.0, 0.2), (9.0, 0.2)]
    assert b.n_cycles == 200
    assert build_cycle("fig3a", 5.0).as_list() == [(-24.0, 0.6)]
    assert build_cycle("fig3b_caption", 5.0).detunings == (-24.0, -25.0, 7.0, 5.0)


@pytest.mark.parametrize("eta", [0.2, 1.0, 2.3, 4.0])
def test_fig2_schemes(eta):
    a = build_cycle("fig2a", eta, fig2_duration=1.5)
    b = build_cycle("fig2b", eta, fig2_duration=1.5)
    c = build_cycle("fig2c", eta, fig2_duration=1.5)
    assert a.as_list() == [(-max(2.0, eta_hat_sq(eta)), 1.5)]
    assert b.as_list() == [(-1.0, 1.5)]
    assert c.pulses == a.pulses + b.pulses
    assert build_cycle("fig2b", eta).pulses[0].duration == 0.6


def test_fig2_duration_is_on_the_grid():
    k = 2 * math.log2(FIG2_DURATION / 0.6)
    assert k == pytest.approx(round(k), abs=1e-12)


def test_auto_scheme():
    c = build_cycle("auto", 5.0, P5)
    assert c.detunings[:2] == (-25.0, -26.0)
    assert set(c.detunings[2:]) == set(select_blue_detunings(P5, (0.0, 26.0)))
    assert [p.duration for p in c.pulses] == [0.6, 0.6, 0.2, 0.2]
    with pytest.raises(ValueError):
        build_cycle("fig9", 5.0)


def test_bounds_validation_and_clip():
    b = PulseBounds(-5.0, -1.0, 0.1, 2.0)
    assert b.clip(Pulse(-7.3, 5.0)) == Pulse(-5.0, 2.0)
    assert b.clip(Pulse(-2.4, 0.01)) == Pulse(-2.0, 0.1)
    for bad in ((1, 0, 0.1, 1), (0.2, 0.8, 0.1, 1), (0, 1, 0, 1), (0, 1, 2, 1), (0, math.inf, 1, 2)):
        with pytest.raises(ValueError):
            PulseBounds(*bad)


def test_problem_validation():
    b = (PulseBounds(-3, -1, 0.1, 1),)
    with pytest.raises(ValueError):
        OptimizationProblem(b, P5, budget=0)
    with pytest.raises(ValueError):
        OptimizationProblem((), P5)
    with pytest.raises(ValueError):
        OptimizationProblem(b, P5, seeds=(build_cycle("fig3b", 5.0),))


def test_default_seeds_at_eta5():
    seeds = seed_cycles(default_problem(P5))
    assert seeds[0].pulses == build_cycle("fig3b", 5.0).pulses
    assert seeds[1].detunings[:2] == (-25.0, -26.0)


def test_budget_one_returns_seed():
    p = PhysicalParams(eta=1.0)
    seed = Cycle((Pulse(-2.0, 0.6), Pulse(-1.0, 0.6)), 50)
    bounds = (PulseBounds(-4, -1, 0.1, 5), PulseBounds(-4, -1, 0.1, 5))
    res = optimize_sequence(OptimizationProblem(bounds, p, n_cycles=50, budget=1, seeds=(seed,)))
    assert res.cycle.pulses == seed.pulses
    assert res.budget_exhausted and not res.converged and len(res.log) == 1
    ref = simulate(seed, p, nbar=6.0)
    assert res.p0 == ref.p0
    assert res.n_max == ref.n_max


def test_descent_improves_and_is_monotone():
    p = PhysicalParams(eta=1.0)
    seed = Cycle((Pulse(-3.0, 0.3),), 40)
    bounds = (PulseBounds(-4, -1, 0.1, 5),)
    res = optimize_sequence(OptimizationProblem(bounds, p, n_cycles=40, budget=25, seeds=(seed,)))
    hist = res.incumbent_history
    assert np.all(np.diff(hist) >= 0)
    assert res.p0 > res.log[0].p0
    assert res.p0 == max(e.p0 for e in res.log)
    assert len(res.log) <= 25
    assert len({e.pulses for e in res.log}) == len(res.log)
    # the reported cycle reproduces its score
    assert simulate(res.cycle, p, nbar=6.0, n_max=res.n_max).p0 == pytest.approx(res.p0, abs=1e-12)


def test_constant_objective_keeps_seed():
    # no motional coupling: every cycle leaves the thermal state untouched
    p = PhysicalParams(eta=0.0)
    seed = Cycle((Pulse(-2.0, 0.6),), 20)
    bounds = (PulseBounds(-4, 4, 0.1, 5),)
    res = optimize_sequence(OptimizationProblem(bounds, p, n_cycles=20, budget=30, seeds=(seed,)))
    assert res.cycle.pulses == seed.pulses
    assert res.converged
    assert res.p0 == pytest.approx(1 / 7, abs=1e-12)


def test_basis_cap_rejects_heating_candidates():
    p = PhysicalParams(eta=1.0)
    hot = Cycle((Pulse(2.0, 20.0),), 40)
    cool = Cycle((Pulse(-1.0, 0.6),), 40)
    bounds = (PulseBounds(-4, 4, 0.1, 50),)
    res = optimize_sequence(OptimizationProblem(bounds, p, n_cycles=40, budget=2, seeds=(hot, cool), n_cap=200))
    assert res.log[0].p0 == -math.inf and "tail" in res.log[0].error
    assert res.cycle.pulses == cool.pulses and res.n_max <= 200
    assert res.p0 == simulate(cool, p, nbar=6.0).p0


def test_default_problem_cap_fits_four_pulse_cycle():
    assert default_problem(P5).n_cap >= simulate(build_cycle("fig3b", 5.0), P5, nbar=6.0).n_max
