"""Matrix elements of the displacement-type operator exp(i*kappa*(a + a^dagger)).

With the dimensionless convention ``k_L x = eta * (a + a^dagger)`` the
absorption factor is ``exp(i*eta*X)`` and the emission factor for a photon
leaving at direction cosine ``u`` is ``exp(-i*eta*u*X)``, both special cases
of ``kappa`` here.

Closed form, for ``n <= m`` and ``d = m - n``::

    <n|exp(i*kappa*X)|m> = exp(-kappa**2/2) (i*kappa)**d sqrt(n!/m!) L_n^d(kappa**2)

The matrix is complex symmetric, so ``A(n, m) == A(m, n)``.  The associated
Laguerre polynomial is never formed on its own: the recurrence runs on the
normalised quantity ``sqrt(n! d!/(n+d)!) L_n^d`` with a running log-scale, and
the prefactor is applied in log space.  That keeps everything finite for
indices in the hundreds.
"""

from __future__ import annotations

import functools
import math

import numba
import numpy as np

__all__ = [
    "required_padding",
    "displacement_element",
    "displacement_row",
    "displacement_block",
    "real_block",
    "oracle_displacement_matrix",
]

# rescale the recurrence once a column grows past this
_BIG = 1e150
_LOG_BIG = math.log(_BIG)
_TINY = 1e-300


def required_padding(kappa: float) -> int:
    """Extra basis states needed so that exp(i*kappa*X) is resolved on a truncation."""
    k = abs(float(kappa))
    return int(math.ceil(6.0 * k * k + 10.0 * k + 20.0))


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not math.isfinite(kappa):
        raise ValueError(f"kappa must be finite, got {kappa!r}")
    return kappa


def _phase(d: int) -> complex:
    return (1.0, 1j, -1.0, -1j)[d % 4]


def _real_amplitude(lo: int, d: int, kappa: float) -> float:
    """Real factor r with <lo|D|lo+d> = i**d * r."""
    if kappa == 0.0:
        return 1.0 if d == 0 else 0.0
    x = kappa * kappa
    log_pref = -0.5 * x + d * math.log(abs(kappa)) - 0.5 * math.lgamma(d + 1)
    sign = -1.0 if (kappa < 0 and d % 2) else 1.0

    g_prev, g = 0.0, 1.0
    log_scale = 0.0
    for j in range(1, lo + 1):
        a = (2 * j - 1 + d - x) * math.sqrt(j / (j + d))
        b = (j - 1 + d) * math.sqrt(j * (j - 1) / ((j + d) * (j + d - 1))) if j > 1 else 0.0
        g_prev, g = g, (a * g - b * g_prev) / j
        if abs(g) > _BIG:
            g_prev /= _BIG
            g /= _BIG
            log_scale += _LOG_BIG
    if g == 0.0:
        return 0.0
    return sign * math.copysign(math.exp(log_pref + log_scale + math.log(abs(g))), g)


def displacement_element(n: int, m: int, kappa: float) -> complex:
    """Return ``<n| exp(i*kappa*(a + a^dagger)) |m>``.

    Parameters
    ----------
    n, m : int
        Fock indices, both non-negative.
    kappa : float
        Dimensionless kick; ``eta`` for absorption, ``-eta*u`` for emission.

    Returns
    -------
    complex
        The amplitude.  It equals ``i**|n-m|`` times a real number.
    """
    if n < 0 or m < 0:
        raise ValueError(f"Fock indices must be non-negative, got ({n}, {m})")
    kappa = _check_kappa(kappa)
    lo, d = min(n, m), abs(n - m)
    return complex(_phase(d) * _real_amplitude(lo, d, kappa))


@functools.lru_cache(maxsize=8)
def _recurrence_coefficients(n_lo: int, d_max: int):
    """kappa-independent pieces of the normalised Laguerre recurrence, stored [d, j]."""
    d = np.arange(d_max + 1, dtype=float)[:, None]
    j = np.arange(n_lo + 1, dtype=float)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s1 = np.sqrt(j / (j + d)) / np.maximum(j, 1.0)
        c2 = (j - 1 + d) * np.sqrt(j * (j - 1) / ((j + d) * (j + d - 1))) / np.maximum(j, 1.0)
    base = (2 * j - 1 + d) * s1
    c2[:, :2] = 0.0
    base[np.isnan(base)] = 0.0
    log_fact = np.array([math.lgamma(k + 1.0) for k in range(d_max + 1)])
    for arr in (s1, c2, base, log_fact):
        arr.setflags(write=False)
    return base, s1, c2, log_fact


@numba.njit(cache=True, nogil=True)
def _table_kernel(kappa, base, s1, c2, log_fact):
    n_d, n_j = base.shape
    T = np.zeros((n_d, n_j))
    x = kappa * kappa
    log_k = math.log(abs(kappa))
    classical = x + 2.0 * abs(kappa) * math.sqrt(n_j - 1.0)
    for d in range(n_d):
        log_pref = -0.5 * x + d * log_k - 0.5 * log_fact[d]
        sign = -1.0 if (kappa < 0 and d % 2 == 1) else 1.0
        g_prev = 0.0
        g = 1.0
        log_scale = 0.0
        # f = sign * exp(log_pref + log_scale) while that is representable
        f = sign * math.exp(log_pref) if log_pref > -600.0 else 0.0
        live = abs(f) >= _TINY
        if live:
            T[d, 0] = f
        for j in range(1, n_j):
            g_new = (base[d, j] - x * s1[d, j]) * g - c2[d, j] * g_prev
            if abs(g_new) > _BIG:
                g_new /= _BIG
                g /= _BIG
                log_scale += _LOG_BIG
                e = log_pref + log_scale
                f = sign * math.exp(e) if -600.0 < e < 600.0 else 0.0
            g_prev = g
            g = g_new
            if f != 0.0:
                v = f * g
            else:
                e = log_pref + log_scale
                if e <= -1100.0 or g == 0.0:
                    v = 0.0
                else:
                    v = math.copysign(math.exp(e + math.log(abs(g))), sign * g)
            # subnormals stall BLAS and carry no information here
            if abs(v) >= _TINY:
                T[d, j] = v
                live = True
        # past the classical reach the columns only shrink with d
        if not live and d > classical:
            break
    return T


def _real_table(kappa: float, n_lo: int, d_max: int) -> np.ndarray:
    """T[d, j] = real factor of <j|D|j+d> for 0 <= j <= n_lo, 0 <= d <= d_max."""
    if kappa == 0.0:
        T = np.zeros((d_max + 1, n_lo + 1))
        T[0] = 1.0
        return T
    base, s1, c2, log_fact = _recurrence_coefficients(n_lo, d_max)
    return _table_kernel(kappa, base, s1, c2, log_fact)


@numba.njit(cache=True, nogil=True)
def _gather_kernel(T, n_rows, cols):
    out = np.empty((n_rows + 1, cols.size))
    for n in range(n_rows + 1):
        for c in range(cols.size):
            k = cols[c]
            if n <= k:
                v = T[k - n, n]
                # i**|d| = i**d * (-1)**d when d < 0
                out[n, c] = -v if (k - n) % 2 == 1 else v
            else:
                out[n, c] = T[n - k, k]
    return out


@functools.lru_cache(maxsize=8)
def _column_order(n_cols: int, split_parity: bool) -> np.ndarray:
    k = np.arange(n_cols + 1)
    if split_parity:
        k = np.concatenate([k[0::2], k[1::2]])
    k.setflags(write=False)
    return k


def real_block(kappa: float, n_rows: int, n_cols: int, split_parity: bool = False) -> np.ndarray:
    """Real matrix B with ``<n|exp(i*kappa*X)|k> = i**n * B[n, k] * i**(-k)``.

    Shape ``(n_rows + 1, n_cols + 1)``.  Products of displacement operators
    can be carried out on these real blocks; the diagonal phases cancel
    between neighbouring factors.  With ``split_parity`` the columns come
    ordered as all even k, then all odd k.
    """
    kappa = _check_kappa(kappa)
    if n_rows < 0 or n_cols < 0:
        raise ValueError("block sizes must be non-negative")
    T = _real_table(kappa, min(n_rows, n_cols), max(n_rows, n_cols))
    return _gather_kernel(T, n_rows, _column_order(n_cols, split_parity))


def displacement_block(kappa: float, n_rows: int, n_cols: int) -> np.ndarray:
    """Closed-form block ``A[n, k] = <n|exp(i*kappa*X)|k>`` for n <= n_rows, k <= n_cols.

    Shape is ``(n_rows + 1, n_cols + 1)``.  This is the batched path used to
    assemble rate matrices.
    """
    kappa = _check_kappa(kappa)
    if n_rows < 0 or n_cols < 0:
        raise ValueError("block sizes must be non-negative")
    n_lo = min(n_rows, n_cols)
    d_max = max(n_rows, n_cols)
    T = _real_table(kappa, n_lo, d_max)
    n = np.arange(n_rows + 1)[:, None]
    k = np.arange(n_cols + 1)[None, :]
    lo = np.minimum(n, k)
    d = np.abs(n - k)
    phase = np.array([1.0, 1j, -1.0, -1j])[d % 4]
    return phase * T[d, lo]


def displacement_row(m: int, kappa: float, n_max: int) -> np.ndarray:
    """Amplitudes ``<n|exp(i*kappa*X)|m>`` for n = 0..n_max."""
    if m < 0:
        raise ValueError(f"Fock index must be non-negative, got {m}")
    if n_max < m:
        raise ValueError(f"n_max={n_max} must be >= m={m}")
    return displacement_block(kappa, n_max, m)[:, m].copy()


def oracle_displacement_matrix(kappa: float, n_max: int, padding: int) -> np.ndarray:
    """Brute-force ``exp(i*kappa*(a + a^dagger))`` on a padded basis, then truncated.

    Diagonalises the real symmetric tridiagonal position matrix on
    ``n_max + padding + 1`` states.  Independent of the closed form; intended
    for cross-checks only.
    """
    kappa = _check_kappa(kappa)
    need = required_padding(kappa)
    if padding < need:
        raise ValueError(f"padding={padding} below the minimum {need} for kappa={kappa}")
    size = n_max + padding + 1
    off = np.sqrt(np.arange(1, size, dtype=float))
    X = np.diag(off, 1) + np.diag(off, -1)
    w, U = np.linalg.eigh(X)
    D = (U * np.exp(1j * kappa * w)) @ U.T
    return D[: n_max + 1, : n_max + 1]
