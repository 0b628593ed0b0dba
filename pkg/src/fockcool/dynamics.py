"""Population dynamics under sequences of rectangular laser pulses."""

from __future__ import annotations

import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import NumericalError, TailMassError
from .rates import PhysicalParams, RateMatrix, build_rate_matrix, truncation_n_max

log = logging.getLogger(__name__)

__all__ = [
    "Pulse",
    "Cycle",
    "SimulationTrace",
    "RateMatrixCache",
    "thermal_populations",
    "thermal_support",
    "basis_size",
    "evolve_pulse",
    "pulse_propagator",
    "run_sequence",
    "simulate",
    "initial_populations",
    "vector_support",
    "validity_check",
]

SERIES_TOL = 1e-14
MAX_SERIES_TERMS = 2_000_000
TAIL_WIDTH = 10
TAIL_LIMIT = 1e-8
# automatic basis: minimum growth of the margin and number of retries after a tail-mass failure
BASIS_GROWTH = 1.4
MAX_ENLARGE = 4


@dataclass(frozen=True)
class Pulse:
    """One rectangular pulse: detuning in units of nu, duration in units of Gamma/Omega^2."""

    delta: float
    duration: float

    def __post_init__(self):
        if not math.isfinite(self.delta):
            raise ValueError(f"detuning must be finite, got {self.delta}")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"pulse duration must be positive, got {self.duration}")


@dataclass(frozen=True)
class Cycle:
    """Ordered pulses applied ``n_cycles`` times."""

    pulses: tuple[Pulse, ...]
    n_cycles: int = 200

    def __post_init__(self):
        pulses = tuple(p if isinstance(p, Pulse) else Pulse(*p) for p in self.pulses)
        object.__setattr__(self, "pulses", pulses)
        if not pulses:
            raise ValueError("a cycle needs at least one pulse")
        if self.n_cycles < 0:
            raise ValueError(f"n_cycles must be non-negative, got {self.n_cycles}")

    @property
    def detunings(self) -> tuple[float, ...]:
        return tuple(p.delta for p in self.pulses)

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.pulses)

    def as_list(self) -> list[tuple[float, float]]:
        return [(p.delta, p.duration) for p in self.pulses]


def thermal_support(nbar: float, tail: float = 1e-10) -> int:
    """Smallest n such that a thermal state holds less than ``tail`` above n."""
    if nbar < 0:
        raise ValueError(f"nbar must be non-negative, got {nbar}")
    if nbar == 0:
        return 0
    q = nbar / (1.0 + nbar)
    # P(N > n) = q**(n+1)
    return max(0, math.ceil(math.log(tail) / math.log(q)) - 1)


def thermal_populations(nbar: float, n_max: int) -> np.ndarray:
    """Geometric distribution with mean ``nbar`` on levels 0..n_max, renormalised.

    Raises ``ValueError`` if truncation moves the mean by more than 1e-6.
    """
    if nbar < 0:
        raise ValueError(f"nbar must be non-negative, got {nbar}")
    P = np.zeros(n_max + 1)
    if nbar == 0:
        P[0] = 1.0
        return P
    q = nbar / (1.0 + nbar)
    n = np.arange(n_max + 1)
    P = np.exp(n * math.log(q))
    P /= P.sum()
    mean = float(n @ P)
    if abs(mean - nbar) > 1e-6:
        raise ValueError(f"n_max={n_max} too small for a thermal state with nbar={nbar} (mean {mean:.8f})")
    return P


def basis_size(params: PhysicalParams, cycle: Cycle, nbar: float | None = None, support: int = 0) -> int:
    """Truncated basis (largest Fock index) for a run, per the truncation policy."""
    if nbar is not None:
        support = max(support, thermal_support(nbar))
    max_delta = max(abs(d) for d in cycle.detunings)
    return truncation_n_max(params.eta, max_delta, support)


class RateMatrixCache:
    """Rate matrices keyed by detuning for one (params, n_max, quad_order).

    Also keeps the most recent pulse propagators.  Safe to share between
    threads: entries are built under a lock and only read afterwards.
    """

    def __init__(self, params: PhysicalParams, n_max: int, quad_order: int | None = None,
                 check_quadrature: bool = True, max_propagators: int = 32):
        self.params = params
        self.n_max = n_max
        self.quad_order = quad_order
        self.check_quadrature = check_quadrature
        self.max_propagators = max_propagators
        self._store: dict[float, RateMatrix] = {}
        self._propagators: OrderedDict = OrderedDict()
        self._lock = threading.RLock()

    def __len__(self):
        return len(self._store)

    def get(self, delta: float) -> RateMatrix:
        key = float(delta)
        with self._lock:
            R = self._store.get(key)
            if R is None:
                log.debug("building rate matrix delta=%g n_max=%d", key, self.n_max)
                R = build_rate_matrix(key, self.params, self.n_max, self.quad_order, self.check_quadrature)
                self._store[key] = R
        return R

    def propagator(self, delta: float, duration: float) -> np.ndarray:
        key = (float(delta), float(duration))
        with self._lock:
            M = self._propagators.get(key)
            if M is None:
                M = pulse_propagator(self.get(delta), duration)
                M.setflags(write=False)
                self._propagators[key] = M
                while len(self._propagators) > self.max_propagators:
                    self._propagators.popitem(last=False)
            else:
                self._propagators.move_to_end(key)
        return M

    def quad_orders(self) -> dict[float, int]:
        return {d: R.quad_order for d, R in self._store.items()}


def _uniformization(values: np.ndarray, duration: float):
    """Stochastic matrix Q, Poisson weights and rate*time for exp(R t)."""
    rate = float(np.max(-np.diag(values))) if values.size else 0.0
    if duration == 0 or rate <= 0:
        return None, None, 0.0
    lam = rate * duration
    n_terms = int(stats.poisson.isf(SERIES_TOL, lam)) + 2
    if n_terms > MAX_SERIES_TERMS:
        raise NumericalError(f"uniformization needs {n_terms} terms (rate*t = {lam:.3g}); split the pulse")
    weights = stats.poisson.pmf(np.arange(n_terms), lam)
    Q = values / rate
    Q[np.diag_indices_from(Q)] = np.maximum(1.0 + np.diag(Q), 0.0)
    Q[Q < 0] = 0.0
    return Q, weights, lam


def _as_values(R) -> np.ndarray:
    return R.values if isinstance(R, RateMatrix) else np.asarray(R, dtype=float)


def evolve_pulse(P: np.ndarray, R: RateMatrix | np.ndarray, duration: float) -> np.ndarray:
    """Apply ``exp(R * duration)`` to a population vector by uniformization.

    With ``L`` the largest outflow rate, ``Q = I + R/L`` is column-stochastic
    and ``exp(R t) P = sum_k Poisson(k; L t) Q**k P``.  Every term is a
    probability vector, so the result is non-negative and normalised by
    construction.
    """
    values = _as_values(R)
    P = np.asarray(P, dtype=float)
    if values.shape != (P.size, P.size):
        raise ValueError(f"rate matrix {values.shape} does not match population vector of size {P.size}")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    Q, weights, _ = _uniformization(values, duration)
    if Q is None:
        return P.copy()
    term = P.copy()
    out = weights[0] * term
    for w in weights[1:]:
        term = Q @ term
        if w > 0:
            out += w * term
    return out / weights.sum()


def pulse_propagator(R: RateMatrix | np.ndarray, duration: float) -> np.ndarray:
    """Column-stochastic matrix ``exp(R * duration)``.

    Uniformization over ``duration / 2**s`` with ``s`` chosen so the
    sub-step has rate*time at most one, then ``s`` squarings.  Every factor
    is entrywise non-negative, so the result is too.
    """
    values = _as_values(R)
    if duration < 0:
        raise ValueError("duration must be non-negative")
    size = values.shape[0]
    rate = float(np.max(-np.diag(values))) if values.size else 0.0
    if duration == 0 or rate <= 0:
        return np.eye(size)
    squarings = max(0, math.ceil(math.log2(max(rate * duration, 1.0))))
    Q, weights, _ = _uniformization(values, duration / 2.0**squarings)
    # Horner: sum_k w_k Q**k
    M = weights[-1] * Q
    M[np.diag_indices_from(M)] += weights[-2]
    for w in weights[-3::-1]:
        M = M @ Q
        M[np.diag_indices_from(M)] += w
    M /= weights.sum()
    for _ in range(squarings):
        M = M @ M
    return M


def _series_terms(R: RateMatrix, duration: float) -> int:
    rate = float(np.max(R.outflow)) if R.values.size else 0.0
    lam = rate * duration
    return int(lam + 6.0 * math.sqrt(lam) + 10.0)


def _use_propagator(R: RateMatrix, duration: float, repeats: int) -> bool:
    """Whether a dense propagator is cheaper than ``repeats`` vector series."""
    size = R.values.shape[0]
    vector_cost = repeats * _series_terms(R, duration) * size
    rate = float(np.max(R.outflow)) if R.values.size else 0.0
    squarings = max(0, math.ceil(math.log2(max(rate * duration, 1.0))))
    matrix_cost = (20 + squarings) * size * size
    return matrix_cost < vector_cost


@dataclass
class SimulationTrace:
    """Output of ``run_sequence``.

    ``snapshots[c]`` is the population after ``c`` cycles (row 0 is the
    initial state); ``p0_per_pulse`` holds the ground-state population after
    every pulse.
    """

    snapshots: np.ndarray
    p0_per_pulse: np.ndarray
    cycle: Cycle
    params: PhysicalParams
    n_max: int
    quad_orders: dict[float, int] = field(default_factory=dict)
    max_norm_error: float = 0.0
    min_population: float = 0.0
    pulse_snapshots: np.ndarray | None = None
    basis_attempts: list[int] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    @property
    def p0(self) -> float:
        return float(self.snapshots[-1, 0])

    @property
    def mean_n(self) -> np.ndarray:
        return self.snapshots @ np.arange(self.n_max + 1)

    @property
    def tail_mass(self) -> np.ndarray:
        return self.snapshots[:, self.n_max - TAIL_WIDTH + 1 :].sum(axis=1)


def _tail(P: np.ndarray) -> float:
    return float(P[P.size - TAIL_WIDTH :].sum())


def run_sequence(
    P0: np.ndarray,
    cycle: Cycle,
    params: PhysicalParams,
    quad_order: int | None = None,
    cache: RateMatrixCache | None = None,
    per_pulse: bool = False,
) -> SimulationTrace:
    """Apply ``cycle`` to the initial populations and record the evolution.

    The basis is the length of ``P0``.  One rate matrix is built per
    distinct detuning (or taken from ``cache``).  A pulse that is repeated
    often enough is applied through its precomputed propagator instead of
    a fresh uniformization series each time; both are exact to the series
    tolerance and keep the populations non-negative.

    Raises
    ------
    TailMassError
        If more than 1e-8 of the population sits in the top ten levels
        after any pulse.
    """
    P = np.asarray(P0, dtype=float).copy()
    n_max = P.size - 1
    if n_max < TAIL_WIDTH:
        raise ValueError(f"basis of {P.size} levels is too small")
    if cache is None:
        cache = RateMatrixCache(params, n_max, quad_order)
    elif cache.n_max != n_max or cache.params != params:
        raise ValueError("rate-matrix cache does not match this run")
    rates = [cache.get(p.delta) for p in cycle.pulses]
    steps = []
    for pulse, R in zip(cycle.pulses, rates):
        repeats = cycle.n_cycles * cycle.pulses.count(pulse)
        if _use_propagator(R, pulse.duration, repeats):
            M = cache.propagator(pulse.delta, pulse.duration)
            steps.append(lambda P, M=M: M @ P)
        else:
            steps.append(lambda P, R=R, t=pulse.duration: evolve_pulse(P, R, t))

    n_pulses = len(cycle.pulses)
    snapshots = np.empty((cycle.n_cycles + 1, n_max + 1))
    snapshots[0] = P
    p0_hist = np.empty(cycle.n_cycles * n_pulses)
    pulse_snaps = np.empty((cycle.n_cycles * n_pulses, n_max + 1)) if per_pulse else None
    norm_err = abs(P.sum() - 1.0)
    min_pop = float(P.min())

    i = 0
    for c in range(cycle.n_cycles):
        for step in steps:
            P = step(P)
            tail = _tail(P)
            if tail > TAIL_LIMIT:
                raise TailMassError(
                    f"tail mass {tail:.3e} in the top {TAIL_WIDTH} levels during cycle {c + 1}; enlarge the basis",
                    cycle=c + 1,
                    tail_mass=tail,
                )
            norm_err = max(norm_err, abs(P.sum() - 1.0))
            min_pop = min(min_pop, float(P.min()))
            p0_hist[i] = P[0]
            if per_pulse:
                pulse_snaps[i] = P
            i += 1
        snapshots[c + 1] = P

    return SimulationTrace(
        snapshots=snapshots,
        p0_per_pulse=p0_hist,
        cycle=cycle,
        params=params,
        n_max=n_max,
        quad_orders={d: cache.get(d).quad_order for d in cycle.detunings},
        max_norm_error=float(norm_err),
        min_population=min_pop,
        pulse_snapshots=pulse_snaps,
    )


def initial_populations(n_max: int, nbar: float | None = None, vector=None) -> np.ndarray:
    """Thermal state with mean ``nbar``, or an explicit vector zero-padded to ``n_max``."""
    if (nbar is None) == (vector is None):
        raise ValueError("give exactly one of nbar and vector")
    if vector is None:
        return thermal_populations(nbar, n_max)
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("initial vector must be a non-empty 1-d sequence")
    if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
        raise ValueError(f"initial vector must be non-negative and sum to 1 within 1e-9 (sum {v.sum():.12g})")
    nonzero = np.flatnonzero(v)
    if nonzero.size and nonzero[-1] > n_max:
        raise ValueError(f"initial vector has weight at n={nonzero[-1]} above n_max={n_max}")
    P = np.zeros(n_max + 1)
    keep = min(v.size, n_max + 1)
    P[:keep] = v[:keep]
    return P / P.sum()


def vector_support(vector, tail: float = 1e-10) -> int:
    """Smallest n with less than ``tail`` of the weight above n."""
    v = np.asarray(vector, dtype=float)
    above = v[::-1].cumsum()[::-1]  # above[n] = sum_{j >= n} v_j
    idx = np.flatnonzero(above >= tail)
    return int(idx[-1]) if idx.size else 0


def _enlarged_basis(size: int, support: int, failed_cycle: int | None, n_cycles: int) -> int:
    """Next basis after the tail guard tripped at ``failed_cycle``.

    The tail front spreads roughly diffusively, so the margin above the
    initial support is scaled by sqrt(n_cycles / failed_cycle), and by at
    least BASIS_GROWTH.
    """
    factor = BASIS_GROWTH
    if failed_cycle:
        factor = max(factor, math.sqrt(n_cycles / failed_cycle))
    margin = max(size - support, 30)
    return int(math.ceil(support + factor * margin))


def simulate(
    cycle: Cycle,
    params: PhysicalParams,
    nbar: float | None = 6.0,
    vector=None,
    n_max: int | None = None,
    quad_order: int | None = None,
    caches: dict | None = None,
    per_pulse: bool = False,
    n_min: int = 0,
    n_cap: int | None = None,
) -> SimulationTrace:
    """Run ``cycle`` from a thermal or explicit initial state.

    With ``n_max=None`` the basis starts from the truncation policy (or
    ``n_min`` if larger) and is enlarged whenever the tail-mass guard trips,
    up to MAX_ENLARGE times (see ``_enlarged_basis``).  An explicit ``n_max``
    is used as given.  ``n_cap`` bounds the automatic growth; a run that
    would need more re-raises the TailMassError.  ``caches`` maps basis size
    to a RateMatrixCache and is filled in as needed, so repeated calls reuse
    matrices.
    """
    if vector is not None:
        nbar = None
    support = thermal_support(nbar) if vector is None else vector_support(vector)
    auto = n_max is None
    size = max(basis_size(params, cycle, support=support), n_min) if auto else int(n_max)
    caches = {} if caches is None else caches
    attempts = []
    while True:
        attempts.append(size)
        cache = caches.get(size)
        if cache is None:
            cache = caches[size] = RateMatrixCache(params, size, quad_order)
        P0 = initial_populations(size, nbar, vector)
        try:
            trace = run_sequence(P0, cycle, params, cache=cache, per_pulse=per_pulse)
        except TailMassError as exc:
            if not auto or len(attempts) > MAX_ENLARGE or (n_cap is not None and size >= n_cap):
                raise
            log.info("basis n_max=%d too small (cycle %s); enlarging", size, exc.cycle)
            size = _enlarged_basis(size, support, exc.cycle, cycle.n_cycles)
            if n_cap is not None:
                size = min(size, n_cap)
            continue
        trace.basis_attempts = attempts
        return trace


def validity_check(params: PhysicalParams) -> list[str]:
    """Warnings for violated rate-equation assumptions; never raises.

    Strong inequalities are taken as a ratio of at most 0.1.
    """
    out = []
    ratio = params.Omega / params.Gamma
    if ratio > 0.1:
        out.append(f"Omega << Gamma violated: Omega/Gamma = {ratio:.3g}")
    ratio = params.Omega**2 / params.Gamma / params.nu
    if ratio > 0.1:
        out.append(f"Omega^2/Gamma << nu violated: Omega^2/(Gamma nu) = {ratio:.3g}")
    ratio = params.Gamma / params.nu
    if ratio >= 1.0:
        out.append(f"strong confinement Gamma < nu violated: Gamma/nu = {ratio:.3g}")
    ratio = params.gamma / params.nu
    if ratio >= 1.0:
        out.append(f"gamma < nu violated: gamma/nu = {ratio:.3g}")
    for msg in out:
        log.warning(msg)
    return out
