import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fockcool.errors import QuadratureError, TruncationError
from fockcool.rates import (
    AngularDistribution,
    PhysicalParams,
    angular_density,
    auto_quad_order,
    build_rate_matrix,
    check_columns,
    emptying_rate,
    emptying_rate_resonant,
    emptying_rates,
    gauss_legendre,
    intermediate_cutoff,
    rate_nm,
    truncation_n_max,
)

import oracles

# rate 1 -> 0 at eta=5, delta=+7, Gamma=0.1, gamma=0.05, dipole; brute-force
# complex oracle with 640 nodes (10x the default order)
RATE_0_1_DELTA7 = 2.472102205826412e-05
# emptying rates at eta=5, delta=+9 from the expm oracle
EMPTY_D9 = {0: 0.00016218899728403973, 1: 0.0033423577569030357, 30: 0.004315044846496088}

P5 = PhysicalParams(eta=5.0)


def test_angular_densities():
    assert angular_density("isotropic", 0.7) == 0.5
    assert angular_density("dipole", 0.0) == 0.375
    u, w = gauss_legendre(64)
    for kind in ("dipole", "isotropic"):
        assert np.dot(w, AngularDistribution(kind)(u)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        AngularDistribution("quadrupole")


def test_params_validation():
    p = PhysicalParams(eta=1.0)
    assert p.gamma == 0.05
    assert PhysicalParams.from_ratio(1.0, 0.2, 1.0).gamma == 0.2
    for bad in (dict(eta=-1.0), dict(eta=1.0, Gamma=0.0), dict(eta=1.0, gamma=0.5), dict(eta=float("inf"))):
        with pytest.raises(ValueError):
            PhysicalParams(**bad)


@pytest.mark.parametrize("delta", [-1.0, 0.0, 2.5, 7.0])
def test_zero_kick_rates(delta):
    p = PhysicalParams(eta=0.0)
    g = p.gamma
    for n in (0, 3):
        assert rate_nm(n, n, delta, p) == pytest.approx(g * g / (delta**2 + g * g), rel=1e-13)
    assert rate_nm(0, 3, delta, p) == 0.0
    assert rate_nm(4, 3, delta, p) == 0.0


def test_frozen_rate_against_brute_force():
    assert rate_nm(0, 1, 7.0, P5) == pytest.approx(RATE_0_1_DELTA7, rel=1e-10)


def test_brute_force_isotropic_off_resonant():
    p = PhysicalParams(eta=2.0, angular="isotropic")
    km = intermediate_cutoff(6, 2.0)
    ref = oracles.brute_rate(2, 6, -3.5, 2.0, p.gamma, 320, km, pattern=oracles.isotropic)
    assert rate_nm(2, 6, -3.5, p) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("eta,m,delta", [(2.0, 3, -2.0), (1.0, 0, 1.0), (3.0, 12, -9.0)])
def test_single_k_completeness(eta, m, delta):
    # with one intermediate level, summing the rate over all final levels
    # leaves the single Lorentzian term of the emptying rate
    p = PhysicalParams(eta=eta)
    k = int(m + round(delta))
    n_top = k + 40 + int(6 * eta * eta)
    km = intermediate_cutoff(n_top, eta)
    total = sum(rate_nm(n, m, delta, p, n_max=km, k_only=k) for n in range(n_top + 1))
    g = p.gamma
    B = abs(oracles.mp_displacement(k, m, eta)) ** 2
    assert total == pytest.approx(B * g * g / ((delta - (k - m)) ** 2 + g * g), rel=1e-10)


def test_emptying_zero_kick_is_flat():
    p = PhysicalParams(eta=0.0)
    g = p.gamma
    np.testing.assert_allclose(emptying_rates(-1.0, p, 30), g * g / (1 + g * g), rtol=1e-14)


def test_emptying_curve_against_oracle():
    curve = emptying_rates(9.0, P5, 60)
    ref = oracles.brute_emptying(9.0, 5.0, 0.05, 60, intermediate_cutoff(60, 5.0))
    assert np.abs(curve - ref).max() <= 1e-8
    for n, v in EMPTY_D9.items():
        assert curve[n] == pytest.approx(v, rel=1e-10)
    assert emptying_rate(30, 9.0, P5) == pytest.approx(curve[30], rel=1e-14)


def test_emptying_equals_row_sum_of_rates():
    p = PhysicalParams(eta=1.5)
    R = build_rate_matrix(-2.0, p, 120)
    # outflow excludes the elastic channel; add it back with the brute-force rate
    for m in (0, 4, 10):
        elastic = rate_nm(m, m, -2.0, p)
        assert R.outflow[m] + elastic == pytest.approx(emptying_rate(m, -2.0, p), rel=1e-9)


def test_fig4_ratio_near_four_percent():
    curve = emptying_rates(7.0, P5, 4)
    assert 0.02 <= curve[0] / curve[1] <= 0.08


def test_resonant_rate():
    p = PhysicalParams(eta=3.0)
    assert emptying_rate_resonant(1, 2, p) == 0.0
    assert emptying_rate_resonant(4, 4, p) == pytest.approx(abs(oracles.mp_displacement(0, 4, 3.0)) ** 2, rel=1e-12)
    assert emptying_rate_resonant(4, 4, p, strict_gt=True) == 0.0
    assert emptying_rate_resonant(7, 4, p, strict_gt=True) > 0.0


def test_resonant_rate_small_kick():
    p = PhysicalParams(eta=0.1)
    exact = abs(oracles.mp_displacement(4, 5, 0.1)) ** 2
    assert emptying_rate_resonant(5, 1, p) == pytest.approx(exact, rel=1e-12)
    # leading order eta^2 n exp(-eta^2), corrected at relative order n eta^2
    lead = 0.01 * 5 * math.exp(-0.01)
    assert abs(exact - lead) <= 5 * 0.01 * lead


def test_matrix_zero_kick_is_zero():
    R = build_rate_matrix(-1.0, PhysicalParams(eta=0.0), 20)
    assert not R.values.any()


def test_matrix_tiny_kick():
    V = build_rate_matrix(-1.0, PhysicalParams(eta=1e-9), 30).values
    assert np.abs(V - np.diag(np.diag(V))).max() < 1e-12


@settings(max_examples=8, deadline=None)
@given(eta=st.floats(0.05, 3.0), delta=st.integers(-10, 10), n_max=st.integers(12, 70))
def test_generator_structure(eta, delta, n_max):
    V = build_rate_matrix(float(delta), PhysicalParams(eta=eta), n_max).values
    off = V - np.diag(np.diag(V))
    assert off.min() >= 0.0
    assert np.abs(V.sum(axis=0)).max() <= 1e-15 * max(1.0, np.abs(V).max()) * n_max
    assert not V.flags.writeable


def test_matrix_entries_match_rate_nm():
    p = PhysicalParams(eta=2.5)
    R = build_rate_matrix(3.0, p, 80)
    for n, m in ((0, 1), (5, 2), (40, 41), (79, 80)):
        assert R.values[n, m] == pytest.approx(rate_nm(n, m, 3.0, p, n_max=R.k_max, quad_order=R.quad_order), rel=1e-11)


def test_dark_levels_below_resonance():
    R = build_rate_matrix(-24.0, P5, 300)
    norms = np.linalg.norm(R.values[:, :24], axis=0)
    assert norms.max() <= 1e-3
    # level 24 reaches n = 0 through k = 0 and is not dark
    assert R.outflow[24] > 1e-2


def test_quadrature_doubling_stability():
    p = PhysicalParams(eta=1.0)
    lo = build_rate_matrix(-1.0, p, 40, quad_order=64, check_quadrature=False).values
    hi = build_rate_matrix(-1.0, p, 40, quad_order=128, check_quadrature=False).values
    mask = np.abs(hi) > 1e-300
    assert (np.abs(lo - hi)[mask] / np.abs(hi)[mask]).max() < 1e-9


def test_explicit_low_order_raises():
    with pytest.raises(QuadratureError):
        build_rate_matrix(-1.0, P5, 200, quad_order=32)


def test_auto_order_passes_check():
    R = build_rate_matrix(-25.0, P5, 200)
    assert R.quad_order == auto_quad_order(5.0, 200)


def test_short_cutoff_raises():
    with pytest.raises(TruncationError):
        rate_nm(0, 30, 0.0, P5, n_max=35)
    with pytest.raises(TruncationError):
        emptying_rates(0.0, P5, 30, k_max=35)


def test_policy_helpers():
    assert truncation_n_max(5.0, 25.0) == 25 + 100 + 30
    assert truncation_n_max(1.5, 1.0, support=140) == 140 + 12 + 30
    assert auto_quad_order(0.1, 30) == 64
    assert auto_quad_order(5.0, 500) % 32 == 0
    cols = check_columns(300)
    assert cols[0] == 0 and cols[-1] == 300 and set(range(293, 301)) <= set(cols)


def test_rate_nm_rejects_bad_input():
    with pytest.raises(ValueError):
        rate_nm(-1, 0, 0.0, P5)
    with pytest.raises(ValueError):
        rate_nm(0, 0, 0.0, P5, quad_order=16)
