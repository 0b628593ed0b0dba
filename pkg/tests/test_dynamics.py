import threading

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fockcool.dynamics import (
    Cycle,
    Pulse,
    RateMatrixCache,
    basis_size,
    evolve_pulse,
    initial_populations,
    pulse_propagator,
    run_sequence,
    simulate,
    thermal_populations,
    thermal_support,
    validity_check,
    vector_support,
)
from fockcool.errors import TailMassError
from fockcool.protocol import build_cycle
from fockcool.rates import PhysicalParams, build_rate_matrix

import oracles

P5 = PhysicalParams(eta=5.0)


@pytest.fixture(scope="module")
def fig3_cache():
    cyc = build_cycle("fig3b", 5.0)
    return RateMatrixCache(P5, basis_size(P5, cyc, nbar=6.0))


def test_thermal_state():
    P = thermal_populations(0.0, 50)
    assert P[0] == 1.0 and P[1:].sum() == 0.0
    P = thermal_populations(6.0, 400)
    assert P[0] == pytest.approx(1 / 7, abs=1e-12)
    assert np.arange(401) @ P == pytest.approx(6.0, abs=1e-6)
    np.testing.assert_allclose(P, oracles.thermal(6.0, 400), rtol=1e-12)
    with pytest.raises(ValueError):
        thermal_populations(6.0, 40)


def test_thermal_support():
    s = thermal_support(6.0)
    q = 6 / 7
    assert q ** (s + 1) < 1e-10 <= q**s
    assert thermal_support(0.0) == 0


def test_initial_vector_handling():
    P = initial_populations(10, vector=[0.25, 0.75])
    np.testing.assert_array_equal(P[:3], [0.25, 0.75, 0.0])
    for bad in ([0.5, 0.4], [-0.1, 1.1], [[1.0]]):
        with pytest.raises(ValueError):
            initial_populations(10, vector=bad)
    with pytest.raises(ValueError):
        initial_populations(1, vector=[0, 0, 1.0])
    with pytest.raises(ValueError):
        initial_populations(10)
    assert vector_support([0.5, 0.5, 0.0, 0.0]) == 1


def test_pulse_and_cycle_validation():
    with pytest.raises(ValueError):
        Pulse(1.0, 0.0)
    with pytest.raises(ValueError):
        Pulse(float("nan"), 1.0)
    with pytest.raises(ValueError):
        Cycle((), 3)
    with pytest.raises(ValueError):
        Cycle((Pulse(-1, 1),), -1)
    c = Cycle((Pulse(-1, 0.5), Pulse(2, 0.25)), 4)
    assert c.duration == 0.75 and c.detunings == (-1.0, 2.0)


def test_trivial_evolution():
    P = thermal_populations(2.0, 60)
    np.testing.assert_array_equal(evolve_pulse(P, np.zeros((61, 61)), 3.0), P)
    R = build_rate_matrix(-1.0, PhysicalParams(eta=0.4), 60)
    np.testing.assert_array_equal(evolve_pulse(P, R, 0.0), P)
    np.testing.assert_array_equal(pulse_propagator(R, 0.0), np.eye(61))
    with pytest.raises(ValueError):
        evolve_pulse(P[:-1], R, 1.0)
    with pytest.raises(ValueError):
        evolve_pulse(P, R, -1.0)


def test_confining_pulse_against_rk4(fig3_cache):
    R = fig3_cache.get(-24.0)
    P = thermal_populations(6.0, fig3_cache.n_max)
    ref = oracles.rk4(R.values, P, 0.6, step=1e-4)
    assert np.abs(evolve_pulse(P, R, 0.6) - ref).max() <= 1e-8


def test_four_pulse_cycle_against_rk4(fig3_cache):
    cyc = build_cycle("fig3b", 5.0, n_cycles=1)
    P = thermal_populations(6.0, fig3_cache.n_max)
    ref = P.copy()
    for pulse in cyc.pulses:
        ref = oracles.rk4(fig3_cache.get(pulse.delta).values, ref, pulse.duration, step=1e-4)
    trace = run_sequence(P, cyc, P5, cache=fig3_cache)
    assert np.abs(trace.final - ref).max() <= 1e-8


def test_propagator_matches_series(fig3_cache):
    R = fig3_cache.get(7.0)
    M = pulse_propagator(R, 0.2)
    assert M.min() >= 0.0
    np.testing.assert_allclose(M.sum(axis=0), 1.0, atol=1e-12)
    P = thermal_populations(6.0, fig3_cache.n_max)
    assert np.abs(M @ P - evolve_pulse(P, R, 0.2)).max() <= 1e-13


@settings(max_examples=30, deadline=None)
@given(
    off=arrays(np.float64, (8, 8), elements=st.floats(0, 5)),
    p=arrays(np.float64, 8, elements=st.floats(0, 1)),
    t=st.floats(0.0, 4.0),
)
def test_uniformization_on_random_generators(off, p, t):
    np.fill_diagonal(off, 0.0)
    R = off - np.diag(off.sum(axis=0))
    if p.sum() == 0:
        p[0] = 1.0
    p = p / p.sum()
    out = evolve_pulse(p, R, t)
    assert out.min() >= 0.0
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(out, scipy.linalg.expm(R * t) @ p, atol=1e-10)
    M = pulse_propagator(R, t)
    assert M.min() >= 0.0
    np.testing.assert_allclose(M @ p, out, atol=1e-10)


def test_zero_cycles_returns_initial_state():
    cyc = Cycle((Pulse(-2.0, 0.6),), 0)
    tr = simulate(cyc, PhysicalParams(eta=1.0), nbar=6.0)
    np.testing.assert_array_equal(tr.final, thermal_populations(6.0, tr.n_max))
    assert tr.snapshots.shape == (1, tr.n_max + 1)


def test_sideband_cooling_limit():
    p = PhysicalParams(eta=0.1)
    tr = simulate(Cycle((Pulse(-1.0, 5.0),), 200), p, nbar=6.0)
    assert tr.p0 >= 0.99
    s = oracles.stationary(build_rate_matrix(-1.0, p, tr.n_max).values)
    assert s[0] >= 0.99
    assert abs(tr.p0 - s[0]) < 1e-3
    # the run keeps approaching the stationary vector
    longer = simulate(Cycle((Pulse(-1.0, 5.0),), 600), p, nbar=6.0)
    assert abs(longer.p0 - s[0]) < abs(tr.p0 - s[0])


def test_conservation_and_determinism():
    p = PhysicalParams(eta=1.0)
    cyc = build_cycle("fig2c", 1.0, p, n_cycles=30)
    a = simulate(cyc, p, nbar=6.0, per_pulse=True)
    b = simulate(cyc, p, nbar=6.0, per_pulse=True)
    assert np.array_equal(a.snapshots, b.snapshots)
    assert a.max_norm_error <= 1e-10
    assert a.min_population >= 0.0
    assert a.pulse_snapshots.shape == (60, a.n_max + 1)
    np.testing.assert_array_equal(a.pulse_snapshots[1::2], a.snapshots[1:])
    np.testing.assert_array_equal(a.p0_per_pulse, a.pulse_snapshots[:, 0])
    assert len(a.mean_n) == 31 and a.tail_mass.shape == (31,)


def test_tail_guard_and_basis_growth():
    p = PhysicalParams(eta=2.0)
    cyc = Cycle((Pulse(-1.0, 0.6), Pulse(3.0, 0.6)), 60)
    with pytest.raises(TailMassError) as err:
        simulate(cyc, p, nbar=2.0, n_max=60)
    assert err.value.tail_mass > 1e-8 and err.value.cycle >= 1
    tr = simulate(cyc, p, nbar=2.0)
    assert tr.n_max == tr.basis_attempts[-1]
    assert tr.tail_mass.max() <= 1e-8
    with pytest.raises(TailMassError):
        simulate(cyc, p, nbar=2.0, n_cap=tr.basis_attempts[0])


def test_dark_manifold_is_stationary():
    p = PhysicalParams(eta=5.0, gamma=1e-3)
    R = build_rate_matrix(-25.0, p, 160)
    P = np.zeros(161)
    P[:25] = oracles.thermal(3.0, 24)
    P /= P.sum()
    out = evolve_pulse(P, R, 1.0)
    assert abs(out[:25].sum() - 1.0) < 1e-4


def test_validity_warnings():
    assert validity_check(PhysicalParams(eta=1.0, Omega=0.01, Gamma=0.1, gamma=0.05)) == []
    w = validity_check(PhysicalParams(eta=1.0, Omega=0.1, Gamma=0.1))
    assert any("Omega << Gamma" in x for x in w)
    w = validity_check(PhysicalParams(eta=1.0, Gamma=2.0))
    assert any("strong confinement" in x for x in w)


def test_cache_reuse_and_threads():
    p = PhysicalParams(eta=0.8)
    cache = RateMatrixCache(p, 40, max_propagators=2)
    results = []

    def work():
        results.append(cache.get(-1.0))

    threads = [threading.Thread(target=work) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(cache) == 1 and all(r is results[0] for r in results)
    a = cache.propagator(-1.0, 0.5)
    cache.propagator(-1.0, 0.7)
    assert cache.propagator(-1.0, 0.5) is a
    cache.propagator(-1.0, 0.9)
    assert cache.propagator(-1.0, 0.7) is not None
    assert not a.flags.writeable
    with pytest.raises(ValueError):
        run_sequence(thermal_populations(1.0, 50), Cycle((Pulse(-1, 1),), 1), p, cache=cache)
