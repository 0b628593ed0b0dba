"""Motional transition rates for a two-level atom driven in the rate-equation regime.

All rates are returned in units of ``Omega**2 / Gamma`` and all frequencies
(detuning, linewidth) are in units of the trap frequency ``nu``.  The rate for
``m -> n`` is

    Gamma(n<-m) = int du N(u) | sum_k gamma <n|e^{-i eta u X}|k> <k|e^{i eta X}|m>
                                          / (delta - (k - m) + i gamma) |**2

where ``X = a + a^dagger``.  The elastic channel ``n == m`` is left out of the
generator; it cancels between gain and loss.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import QuadratureError, TruncationError
from .fock import displacement_element, real_block, required_padding

__all__ = [
    "AngularDistribution",
    "PhysicalParams",
    "RateMatrix",
    "angular_density",
    "gauss_legendre",
    "intermediate_cutoff",
    "truncation_n_max",
    "auto_quad_order",
    "rate_nm",
    "emptying_rate",
    "emptying_rates",
    "emptying_rate_resonant",
    "build_rate_matrix",
]

TAIL_TOL = 1e-12
QUAD_TOL = 1e-6
# rates below this (units Omega^2/Gamma) are ignored by the quadrature check
QUAD_FLOOR = 1e-15
MAX_QUAD_ORDER = 2048
# evenly spaced columns used by the doubling check in build_rate_matrix
CHECK_COLUMNS = 64
# emission-block entries below this are skipped in the angular integral
BAND_THRESH = 1e-30
ROW_BLOCK = 32
COL_BLOCK = 1024

ANGULAR_KINDS = ("dipole", "isotropic")


@dataclass(frozen=True)
class AngularDistribution:
    """Angular distribution N(u) of the spontaneously emitted photon, u = cos(theta)."""

    kind: str = "dipole"

    def __post_init__(self):
        if self.kind not in ANGULAR_KINDS:
            raise ValueError(f"unknown angular distribution {self.kind!r}; use one of {ANGULAR_KINDS}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "dipole":
            return 0.375 * (1.0 + u * u)
        return np.full_like(u, 0.5)


def angular_density(dist: AngularDistribution | str, u: float) -> float:
    """Density N(u); raises ``ValueError`` for u outside [-1, 1]."""
    if isinstance(dist, str):
        dist = AngularDistribution(dist)
    if not -1.0 <= u <= 1.0:
        raise ValueError(f"direction cosine {u} outside [-1, 1]")
    return float(dist(u))


@dataclass(frozen=True)
class PhysicalParams:
    """Physical inputs.  Frequencies are in units of ``nu`` (``nu = 1``).

    ``gamma`` is the Lorentzian half-width; it defaults to ``Gamma / 2``.
    ``Omega`` enters the dynamics only through the rate unit Omega^2/Gamma
    and is kept for the validity checks.
    """

    eta: float
    Gamma: float = 0.1
    gamma: float | None = None
    Omega: float = 0.01
    angular: AngularDistribution = field(default_factory=AngularDistribution)
    nu: float = 1.0

    def __post_init__(self):
        if isinstance(self.angular, str):
            object.__setattr__(self, "angular", AngularDistribution(self.angular))
        if self.gamma is None:
            object.__setattr__(self, "gamma", 0.5 * self.Gamma)
        for name in ("Gamma", "gamma", "Omega", "nu"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError(f"eta must be non-negative and finite, got {self.eta}")
        if self.gamma > self.Gamma:
            raise ValueError(f"gamma={self.gamma} exceeds Gamma={self.Gamma}")

    @classmethod
    def from_ratio(cls, eta, Gamma=0.1, gamma_ratio=0.5, **kwargs):
        return cls(eta=eta, Gamma=Gamma, gamma=gamma_ratio * Gamma, **kwargs)

    @property
    def gamma_over_nu(self) -> float:
        return self.gamma / self.nu


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Generator of the population dynamics, ``dP/dt = values @ P``.

    ``values[n, m]`` is the rate m -> n for n != m; each diagonal entry is
    minus the total outflow of its column, so every column sums to zero.
    """

    values: np.ndarray
    delta: float
    params: PhysicalParams
    quad_order: int
    k_max: int

    @property
    def n_max(self) -> int:
        return self.values.shape[0] - 1

    @property
    def outflow(self) -> np.ndarray:
        return -np.diag(self.values).copy()


@functools.lru_cache(maxsize=16)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    if order < 1:
        raise ValueError("quadrature order must be positive")
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def intermediate_cutoff(n_top: int, eta: float) -> int:
    """Largest intermediate Fock index kept in the sum over excited-state k.

    The kick spreads level m out to roughly the classical turning point
    (sqrt(m) + eta)**2, past which amplitudes decay on a scale ~ k**(1/3).
    """
    turning = (math.sqrt(n_top) + abs(eta)) ** 2
    return max(n_top + required_padding(eta), int(math.ceil(turning + 12.0 * turning ** (1.0 / 3.0))))


def auto_quad_order(eta: float, n_max: int) -> int:
    """Gauss-Legendre order that resolves the emission integral on levels 0..n_max.

    The emission amplitude between levels n and k oscillates in u at a rate
    of about eta * (sqrt(n) + sqrt(k)); with k up to the intermediate cutoff
    that sets the order, rounded up to a multiple of 32 with some headroom.
    """
    k_max = intermediate_cutoff(n_max, eta)
    need = abs(eta) * (math.sqrt(n_max) + math.sqrt(k_max)) + 16.0
    return max(64, 32 * math.ceil(need / 32.0))


def truncation_n_max(eta: float, max_abs_delta: float = 0.0, support: int = 0) -> int:
    """Basis size from the truncation policy.

    ``support`` is the index beyond which the initial state carries less
    than 1e-10 of probability.
    """
    eta_hat_sq = math.ceil(round(eta * eta, 12))
    return int(math.ceil(max(support, abs(max_abs_delta)) + 4 * eta_hat_sq + 30))


def _check_tail(V: np.ndarray, what: str) -> None:
    # |<n|e^{-i eta u X}|k>| <= 1, so the last row bounds the last k-term of any amplitude
    scale = np.abs(V).max(axis=0)
    last = np.abs(V[-1])
    bad = last > TAIL_TOL * scale
    if bad.any():
        col = int(np.argmax(bad))
        raise TruncationError(
            f"{what}: intermediate sum not converged at k={V.shape[0] - 1} "
            f"(column {col}: last term {last[col]:.3e} vs scale {scale[col]:.3e})"
        )


def _absorption(delta: float, params: PhysicalParams, m_top: int, k_max: int) -> np.ndarray:
    """Y[k, m] = B[k, m] * gamma / (delta - (k - m) + i gamma), B the real kick block.

    The true absorption amplitude differs from Y only by the phases
    i**(k - m), which drop out of every rate.
    """
    B = real_block(params.eta, k_max, m_top)
    g = params.gamma_over_nu
    k = np.arange(k_max + 1)[:, None]
    m = np.arange(m_top + 1)[None, :]
    return B * (g / (delta - (k - m) + 1j * g))


def _angular_integral(Y: np.ndarray, params: PhysicalParams, n_top: int, order: int) -> np.ndarray:
    """int du N(u) |E(u) Y|**2 over rows 0..n_top, with E(u) the emission kick block."""
    k_max, cols = Y.shape[0] - 1, Y.shape[1]
    u, w = gauss_legendre(order)
    weights = w * params.angular(u)
    # even k first, then odd k, so both halves are contiguous for BLAS
    perm = np.concatenate([np.arange(0, k_max + 1, 2), np.arange(1, k_max + 1, 2)])
    n_even = (k_max + 2) // 2
    stacked = np.hstack([Y.real, Y.imag])[perm]
    Y_even, Y_odd = stacked[:n_even], stacked[n_even:]
    y_bands = _column_bands(Y_even, Y_odd)
    acc = np.zeros((n_top + 1, 2 * cols))
    a1 = np.empty_like(acc)
    a2 = np.empty_like(acc)
    # nodes come in pairs +-u; B(+u) = P B(-u) P with P = diag((-1)**n)
    for i in range(order // 2):
        j = order - 1 - i
        B = real_block(-params.eta * u[j], n_top, k_max, split_parity=True)
        _banded_product(B, n_even, Y_even, Y_odd, y_bands, a1, a2)
        _accumulate_pair(acc, a1, a2, weights[j], weights[i])
    out = acc[:, :cols] + acc[:, cols:]
    if order % 2:
        mid = Y[: n_top + 1]
        out += weights[order // 2] * (mid.real**2 + mid.imag**2)
    return out


@numba.njit(cache=True, nogil=True)
def _block_bands(B, n_even, block, thresh):
    """Per row block, the column ranges of each parity half holding entries above ``thresh``."""
    rows, n_cols = B.shape
    n_blocks = (rows + block - 1) // block
    bands = np.zeros((n_blocks, 4), dtype=np.int64)
    for b in range(n_blocks):
        lo_e, hi_e, lo_o, hi_o = n_even, 0, n_cols, n_even
        for r in range(b * block, min(rows, (b + 1) * block)):
            for c in range(n_cols):
                if abs(B[r, c]) > thresh:
                    if c < n_even:
                        lo_e = min(lo_e, c)
                        hi_e = max(hi_e, c + 1)
                    else:
                        lo_o = min(lo_o, c)
                        hi_o = max(hi_o, c + 1)
        bands[b, 0] = lo_e
        bands[b, 1] = hi_e
        bands[b, 2] = lo_o
        bands[b, 3] = hi_o
    return bands


def _banded_product(B, n_even, Y_even, Y_odd, y_bands, a1, a2):
    """a1 = B_even @ Y_even and a2 = B_odd @ Y_odd, skipping negligible bands.

    Emission and absorption blocks are both concentrated between the
    classical turning points, so each (row block, column block) pair only
    needs the overlap of the two k-ranges.  Entries below BAND_THRESH are
    dropped; relative to amplitudes of order one that is far below rounding.
    """
    bands = _block_bands(B, n_even, ROW_BLOCK, BAND_THRESH)
    for b, (lo_e, hi_e, lo_o, hi_o) in enumerate(bands):
        r0, r1 = b * ROW_BLOCK, min(B.shape[0], (b + 1) * ROW_BLOCK)
        for c, (ylo_e, yhi_e, ylo_o, yhi_o) in enumerate(y_bands):
            c0, c1 = c * COL_BLOCK, min(a1.shape[1], (c + 1) * COL_BLOCK)
            k0, k1 = max(lo_e, ylo_e), min(hi_e, yhi_e)
            if k1 > k0:
                a1[r0:r1, c0:c1] = B[r0:r1, k0:k1] @ Y_even[k0:k1, c0:c1]
            else:
                a1[r0:r1, c0:c1] = 0.0
            k0, k1 = max(lo_o, ylo_o + n_even), min(hi_o, yhi_o + n_even)
            if k1 > k0:
                a2[r0:r1, c0:c1] = B[r0:r1, k0:k1] @ Y_odd[k0 - n_even : k1 - n_even, c0:c1]
            else:
                a2[r0:r1, c0:c1] = 0.0


def _column_bands(Y_even, Y_odd):
    """Per column block, the k-ranges (within each parity half) where Y is not negligible."""
    cols = Y_even.shape[1]
    out = []
    for c0 in range(0, cols, COL_BLOCK):
        row = []
        for half in (Y_even, Y_odd):
            live = np.flatnonzero((np.abs(half[:, c0 : c0 + COL_BLOCK]) > BAND_THRESH).any(axis=1))
            row += [int(live[0]), int(live[-1]) + 1] if live.size else [0, 0]
        out.append(row)
    return out


@numba.njit(cache=True, nogil=True)
def _accumulate_pair(acc, a1, a2, w_plus, w_minus):
    rows, cols = acc.shape
    for r in range(rows):
        for c in range(cols):
            p = a1[r, c] + a2[r, c]
            m = a1[r, c] - a2[r, c]
            acc[r, c] += w_plus * p * p + w_minus * m * m


def _quad_mismatch(lo: np.ndarray, hi: np.ndarray) -> float:
    diff = np.abs(lo - hi)
    scale = np.maximum(np.abs(hi), QUAD_FLOOR / QUAD_TOL)
    return float((diff / scale).max())


def rate_nm(
    n: int,
    m: int,
    delta: float,
    params: PhysicalParams,
    n_max: int | None = None,
    quad_order: int = 64,
    k_only: int | None = None,
) -> float:
    """Transition rate m -> n in units of Omega^2/Gamma.

    Parameters
    ----------
    n, m : int
        Final and initial Fock levels.
    delta : float
        Laser detuning in units of nu.
    params : PhysicalParams
    n_max : int, optional
        Cutoff of the intermediate sum over k.  Defaults to
        ``max(n, m)`` plus the padding required at ``eta``.
    quad_order : int
        Gauss-Legendre nodes for the emission-angle integral (>= 32).
        The result is also computed at twice this order as a check.
    k_only : int, optional
        Keep only this intermediate level in the sum.

    Raises
    ------
    TruncationError
        If the intermediate sum has not converged at the cutoff.
    QuadratureError
        If doubling the order changes the result by more than 1e-6 relative.
    """
    if n < 0 or m < 0:
        raise ValueError("Fock indices must be non-negative")
    if quad_order < 32:
        raise ValueError(f"quad_order must be >= 32, got {quad_order}")
    k_max = intermediate_cutoff(max(n, m), params.eta) if n_max is None else n_max
    if k_max < max(n, m):
        raise ValueError(f"cutoff {k_max} below the requested levels ({n}, {m})")
    V = _absorption(delta, params, m, k_max)[:, m : m + 1]
    if k_only is not None:
        mask = np.zeros_like(V)
        mask[k_only] = V[k_only]
        V = mask
    else:
        _check_tail(V, f"rate_nm({n}, {m})")
    lo = _angular_integral(V, params, n, quad_order)[n, 0]
    hi = _angular_integral(V, params, n, 2 * quad_order)[n, 0]
    if _quad_mismatch(np.array([lo]), np.array([hi])) > QUAD_TOL:
        raise QuadratureError(f"rate_nm({n}, {m}): order {quad_order} gives {lo:.6e}, doubled {hi:.6e}")
    return float(lo)


def emptying_rates(delta: float, params: PhysicalParams, n_top: int, k_max: int | None = None) -> np.ndarray:
    """Total excitation rates out of levels 0..n_top (units Omega^2/Gamma)."""
    k_max = intermediate_cutoff(n_top, params.eta) if k_max is None else k_max
    if k_max < n_top:
        raise ValueError("cutoff below n_top")
    B = real_block(params.eta, k_max, n_top)
    g = params.gamma_over_nu
    k = np.arange(k_max + 1)[:, None]
    n = np.arange(n_top + 1)[None, :]
    terms = g * g * B**2 / ((delta - (k - n)) ** 2 + g * g)
    total = terms.sum(axis=0)
    bad = terms[-1] > TAIL_TOL * total
    if bad.any():
        col = int(np.argmax(bad))
        raise TruncationError(f"emptying rate of n={col} not converged at k={k_max}")
    return total


def emptying_rate(n: int, delta: float, params: PhysicalParams, n_max: int | None = None) -> float:
    """Rate at which level ``n`` is excited (and hence emptied), units Omega^2/Gamma."""
    if n < 0:
        raise ValueError("Fock index must be non-negative")
    if n_max is not None and n_max < n:
        raise ValueError(f"n_max={n_max} below n={n}")
    return float(emptying_rates(delta, params, n, n_max)[n])


def emptying_rate_resonant(n: int, k0: int, params: PhysicalParams, strict_gt: bool = False) -> float:
    """Single-sideband approximation of the emptying rate for ``delta = -k0 * nu``.

    Returns ``|<n-k0|e^{i eta X}|n>|**2`` when the target level exists and 0
    otherwise.  ``strict_gt=True`` also zeroes ``n == k0``.
    """
    if n < 0:
        raise ValueError("Fock index must be non-negative")
    k0 = int(k0)
    target = n - k0
    if target < 0 or (strict_gt and target == 0):
        return 0.0
    return abs(displacement_element(target, n, params.eta)) ** 2


def check_columns(n_max: int) -> np.ndarray:
    """Initial levels whose rates are recomputed at doubled quadrature order.

    About 64 evenly spaced columns plus the top eight.  The emission integrand
    oscillates fastest for the highest levels, so those are always included.
    """
    stride = max(1, (n_max + 1) // CHECK_COLUMNS)
    cols = np.union1d(np.arange(0, n_max + 1, stride), np.arange(max(0, n_max - 7), n_max + 1))
    return cols


def build_rate_matrix(
    delta: float,
    params: PhysicalParams,
    n_max: int,
    quad_order: int | None = None,
    check_quadrature: bool = True,
    k_max: int | None = None,
) -> RateMatrix:
    """Assemble the generator over levels 0..n_max for one laser detuning.

    ``quad_order=None`` picks the order with ``auto_quad_order`` and doubles
    it (up to ``MAX_QUAD_ORDER``) until the doubling check passes.  An
    explicit order is used as given and a failed check raises
    ``QuadratureError``.  The check covers the columns from ``check_columns``.

    Transitions to levels above ``n_max`` are not represented; the caller
    keeps the basis large enough (see ``truncation_n_max``) and watches the
    tail mass during a run.
    """
    auto = quad_order is None
    order = auto_quad_order(params.eta, n_max) if auto else int(quad_order)
    if order < 32:
        raise ValueError(f"quad_order must be >= 32, got {order}")
    k_max = intermediate_cutoff(n_max, params.eta) if k_max is None else k_max
    Y = _absorption(delta, params, n_max, k_max)
    _check_tail(Y, f"rate matrix at delta={delta}")
    R = _angular_integral(Y, params, n_max, order)
    np.fill_diagonal(R, 0.0)
    cols = check_columns(n_max)
    while check_quadrature:
        R2 = _angular_integral(Y[:, cols], params, n_max, 2 * order)
        R2[cols, np.arange(cols.size)] = 0.0
        err = _quad_mismatch(R[:, cols], R2)
        if err <= QUAD_TOL:
            break
        if not auto or 2 * order > MAX_QUAD_ORDER:
            raise QuadratureError(f"rate matrix at delta={delta}: order {order} off by {err:.2e} relative")
        order *= 2
        R = _angular_integral(Y, params, n_max, order)
        np.fill_diagonal(R, 0.0)
    R[np.diag_indices_from(R)] = -R.sum(axis=0)
    R.setflags(write=False)
    return RateMatrix(values=R, delta=float(delta), params=params, quad_order=order, k_max=k_max)
