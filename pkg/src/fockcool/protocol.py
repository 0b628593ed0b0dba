"""Detuning heuristics, pulse-cycle recipes and a coordinate-descent pulse optimizer.

Detunings are integers in units of the trap frequency; durations are in
units of Gamma/Omega**2.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Cycle, Pulse, simulate
from .errors import NoFeasibleDetuning, NumericalError
from .rates import PhysicalParams, emptying_rates

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMES",
    "eta_hat_sq",
    "confining_detunings",
    "BlueCandidate",
    "scan_blue_detunings",
    "select_blue_detunings",
    "build_cycle",
    "calibrate_fig2_duration",
    "PulseBounds",
    "OptimizationProblem",
    "Evaluation",
    "OptimizationResult",
    "default_problem",
    "seed_cycles",
    "optimize_sequence",
]

SCHEMES = ("fig2a", "fig2b", "fig2c", "fig3a", "fig3b", "fig3b_caption", "auto")

CONFINE_DURATION = 0.6
EMPTY_DURATION = 0.2
FIG3_DETUNINGS = (-24.0, -25.0, 7.0, 9.0)
FIG3_CAPTION_DETUNINGS = (-24.0, -25.0, 7.0, 5.0)

# Fig. 2 pulse length in Gamma/Omega^2: smallest 0.6 * 2**(k/2) for which
# scheme (c) reaches P0 >= 0.9 at every anchor eta (see calibrate_fig2_duration)
FIG2_ANCHORS = (0.5, 1.0, 1.5, 2.0, 2.5)
FIG2_DURATION = 0.6 * 2.0**4.5

# blue-pulse selection
GAMMA1_FLOOR = 5e-4
RATIO_CAP = 0.1
SAFETY_BOUND = 0.02
TIE_BAND = 0.05
MIN_SPACING = 2

DURATION_STEPS = (2.0, math.sqrt(2.0), 1.0 / math.sqrt(2.0), 0.5)
IMPROVEMENT = 1e-12
# largest basis the default optimizer problem grows to; the eta=5 four-pulse cycle needs ~560
DEFAULT_BASIS_CAP = 800


def eta_hat_sq(eta: float) -> int:
    """Smallest integer >= eta**2."""
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    # round first so that e.g. 1.1**2 = 1.2100000000000002 is not pushed up
    return int(math.ceil(round(eta * eta, 12)))


def confining_detunings(eta: float) -> list[float]:
    """Red detunings of the two confining pulses, ``[-max(2, eta_hat**2), -(1 + eta_hat**2)]``."""
    e2 = eta_hat_sq(eta)
    return [-float(max(2, e2)), -float(1 + e2)]


@dataclass(frozen=True)
class BlueCandidate:
    delta: float
    gamma0: float
    gamma1: float

    @property
    def ratio(self) -> float:
        return self.gamma0 / self.gamma1 if self.gamma1 > 0 else math.inf


def scan_blue_detunings(params: PhysicalParams, delta_range=(0.0, 26.0)) -> list[BlueCandidate]:
    """Emptying rates of levels 0 and 1 for every positive integer detuning in ``delta_range``."""
    lo, hi = map(float, delta_range)
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ValueError(f"bad detuning range {delta_range}")
    if hi <= 0:
        raise ValueError("blue detunings must be positive")
    out = []
    for d in range(max(1, math.ceil(lo)), math.floor(hi) + 1):
        g0, g1 = emptying_rates(float(d), params, 1)
        out.append(BlueCandidate(float(d), float(g0), float(g1)))
    return out


def select_blue_detunings(
    params: PhysicalParams,
    delta_range=(0.0, 26.0),
    count: int = 2,
    duration: float = EMPTY_DURATION,
    gamma1_floor: float = GAMMA1_FLOOR,
    ratio_cap: float = RATIO_CAP,
    safety_bound: float = SAFETY_BOUND,
) -> list[float]:
    """Blue detunings that empty level 1 while sparing the ground state.

    A candidate is feasible if ``Gamma_1 >= gamma1_floor``,
    ``Gamma_0 / Gamma_1 <= ratio_cap`` and ``Gamma_0 * duration <= safety_bound``.
    Candidates are picked greedily by smallest ratio; ratios within
    TIE_BAND (relative) of the best remaining one count as ties and go to
    the smaller detuning.  Picks are at least MIN_SPACING apart so that a
    level sitting in a Franck-Condon zero of one pulse is caught by the
    other.

    Returns fewer than ``count`` detunings if the feasible set runs out.

    Raises
    ------
    NoFeasibleDetuning
        If no candidate is feasible.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    feasible = [
        c
        for c in scan_blue_detunings(params, delta_range)
        if c.gamma1 >= gamma1_floor and c.ratio <= ratio_cap and c.gamma0 * duration <= safety_bound
    ]
    if not feasible:
        raise NoFeasibleDetuning(
            f"no blue detuning in {delta_range} has Gamma_1 >= {gamma1_floor:g}, "
            f"Gamma_0/Gamma_1 <= {ratio_cap:g} and Gamma_0*t <= {safety_bound:g} at eta={params.eta}"
        )
    picked: list[BlueCandidate] = []
    pool = list(feasible)
    while pool and len(picked) < count:
        best = min(c.ratio for c in pool)
        tied = [c for c in pool if c.ratio <= best * (1.0 + TIE_BAND)]
        choice = min(tied, key=lambda c: c.delta)
        picked.append(choice)
        pool = [c for c in pool if abs(c.delta - choice.delta) >= MIN_SPACING]
    if len(picked) < count:
        log.warning("only %d of %d blue detunings are feasible", len(picked), count)
    return [c.delta for c in picked]


def build_cycle(
    scheme: str,
    eta: float,
    params: PhysicalParams | None = None,
    n_cycles: int = 200,
    fig2_duration: float = CONFINE_DURATION,
) -> Cycle:
    """Pulse cycle for a named scheme.

    ``fig2a``: one pulse at ``-max(2, eta_hat**2)``.  ``fig2b``: one pulse at
    -1.  ``fig2c``: both, in that order.  The three use ``fig2_duration``
    per pulse.  ``fig3a`` and ``fig3b`` are the fixed eta = 5 recipes and
    ``fig3b_caption`` swaps the last blue pulse to +5.  ``auto`` combines
    ``confining_detunings`` with ``select_blue_detunings`` (needs
    ``params``; its eta is replaced by ``eta``).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
    if scheme.startswith("fig2"):
        a = Pulse(confining_detunings(eta)[0], fig2_duration)
        b = Pulse(-1.0, fig2_duration)
        pulses = {"fig2a": (a,), "fig2b": (b,), "fig2c": (a, b)}[scheme]
    elif scheme == "fig3a":
        pulses = (Pulse(FIG3_DETUNINGS[0], CONFINE_DURATION),)
    elif scheme in ("fig3b", "fig3b_caption"):
        deltas = FIG3_DETUNINGS if scheme == "fig3b" else FIG3_CAPTION_DETUNINGS
        durations = (CONFINE_DURATION, CONFINE_DURATION, EMPTY_DURATION, EMPTY_DURATION)
        pulses = tuple(Pulse(d, t) for d, t in zip(deltas, durations))
    else:
        params = PhysicalParams(eta=eta) if params is None else dataclasses.replace(params, eta=eta)
        red = [Pulse(d, CONFINE_DURATION) for d in confining_detunings(eta)]
        blue = [Pulse(d, EMPTY_DURATION) for d in select_blue_detunings(params, (0.0, 1.0 + eta_hat_sq(eta)))]
        pulses = tuple(red + blue)
    return Cycle(pulses, n_cycles)


def calibrate_fig2_duration(
    params: PhysicalParams,
    anchors=FIG2_ANCHORS,
    target: float = 0.9,
    base: float = 0.6,
    max_steps: int = 12,
    nbar: float = 6.0,
    n_cycles: int = 200,
    start: int = 0,
):
    """Shortest duration ``base * 2**(k/2)`` for which scheme (c) reaches ``target`` at every anchor eta.

    Returns ``(duration, rows)`` with one ``(duration, eta, P0)`` row per run.
    Anchors are tried in order and a duration is dropped at its first miss.
    If no duration qualifies the one with the best worst-anchor P0 is returned.
    """
    caches = {float(e): {} for e in anchors}
    rows = []
    worst = {}
    for k in range(start, max_steps + 1):
        t = base * 2.0 ** (k / 2)
        worst[t] = math.inf
        for eta in anchors:
            p = dataclasses.replace(params, eta=float(eta))
            trace = simulate(build_cycle("fig2c", eta, p, n_cycles, t), p, nbar=nbar, caches=caches[float(eta)])
            rows.append((t, float(eta), trace.p0))
            log.info("fig2 calibration: t=%g eta=%g P0=%.4f", t, eta, trace.p0)
            worst[t] = min(worst[t], trace.p0)
            if trace.p0 < target:
                break
        else:
            return t, rows
    return max(worst, key=worst.get), rows


# --- optimizer ------------------------------------------------------------


@dataclass(frozen=True)
class PulseBounds:
    """Search box for one pulse; detunings are searched on the integer grid."""

    delta_lo: float
    delta_hi: float
    duration_lo: float
    duration_hi: float

    def __post_init__(self):
        vals = (self.delta_lo, self.delta_hi, self.duration_lo, self.duration_hi)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("bounds must be finite")
        if self.delta_hi < self.delta_lo or math.floor(self.delta_hi) < math.ceil(self.delta_lo):
            raise ValueError(f"empty detuning range [{self.delta_lo}, {self.delta_hi}]")
        if not (0 < self.duration_lo <= self.duration_hi):
            raise ValueError(f"bad duration range [{self.duration_lo}, {self.duration_hi}]")

    def clip(self, pulse: Pulse) -> Pulse:
        d = min(max(round(pulse.delta), math.ceil(self.delta_lo)), math.floor(self.delta_hi))
        t = min(max(pulse.duration, self.duration_lo), self.duration_hi)
        return Pulse(float(d), float(t))


@dataclass
class OptimizationProblem:
    """Maximise the final ground-state population over a fixed-length pulse cycle."""

    bounds: tuple[PulseBounds, ...]
    params: PhysicalParams
    n_cycles: int = 200
    budget: int = 200
    nbar: float = 6.0
    seeds: tuple[Cycle, ...] | None = None
    quad_order: int | None = None
    n_max: int | None = None
    n_cap: int | None = None

    def __post_init__(self):
        self.bounds = tuple(self.bounds)
        if not self.bounds:
            raise ValueError("need at least one pulse")
        if int(self.budget) != self.budget or self.budget < 1:
            raise ValueError(f"budget must be a positive integer, got {self.budget}")
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be at least 1")
        if self.seeds is not None:
            self.seeds = tuple(self.seeds)
            for s in self.seeds:
                if len(s.pulses) != len(self.bounds):
                    raise ValueError(f"seed has {len(s.pulses)} pulses, bounds describe {len(self.bounds)}")

    @property
    def n_variables(self) -> int:
        return 2 * len(self.bounds)


@dataclass(frozen=True)
class Evaluation:
    index: int
    pulses: tuple[Pulse, ...]
    p0: float
    incumbent_p0: float
    start: int
    error: str | None = None


@dataclass
class OptimizationResult:
    cycle: Cycle
    p0: float
    log: list[Evaluation]
    budget_exhausted: bool
    converged: bool
    n_max: int | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def incumbent_history(self) -> np.ndarray:
        return np.array([e.incumbent_p0 for e in self.log])


def default_problem(params: PhysicalParams, budget: int = 200, n_cycles: int = 200, nbar: float = 6.0,
                    n_cap: int | None = DEFAULT_BASIS_CAP):
    """Two red and two blue pulses with bounds scaled by eta_hat**2.

    Candidates whose population would spread past ``n_cap`` levels count as
    failed evaluations; such cycles heat rather than cool.
    """
    e2 = eta_hat_sq(params.eta)
    red = PulseBounds(-(e2 + 4.0), -1.0, 0.05, 10.0)
    blue = PulseBounds(1.0, e2 + 1.0, 0.05, 10.0)
    return OptimizationProblem((red, red, blue, blue), params, n_cycles=n_cycles, budget=budget, nbar=nbar,
                               n_cap=n_cap)


def seed_cycles(problem: OptimizationProblem) -> list[Cycle]:
    """Starting cycles: the given seeds, else the fig3b-like and auto recipes.

    The fig3b-like seed puts the confining pulses at ``-(eta_hat**2 - 1)`` and
    ``-eta_hat**2`` (which is fig3b itself at eta = 5).  Seeds are clipped
    into the bounds; recipes that cannot be built are skipped.
    """
    if problem.seeds is not None:
        raw = list(problem.seeds)
    else:
        raw = []
        eta = problem.params.eta
        e2 = eta_hat_sq(eta)
        try:
            blue = select_blue_detunings(problem.params, (0.0, 1.0 + e2))
        except NoFeasibleDetuning:
            blue = []
        n_blue = len(problem.bounds) - 2
        if len(blue) >= n_blue >= 0:
            reds = [-(max(e2, 2) - 1.0), -float(max(e2, 2))]
            durations = [CONFINE_DURATION] * 2 + [EMPTY_DURATION] * n_blue
            raw.append(Cycle([Pulse(d, t) for d, t in zip(reds + blue[:n_blue], durations)]))
            reds = confining_detunings(eta)
            raw.append(Cycle([Pulse(d, t) for d, t in zip(reds + blue[:n_blue], durations)]))
        if not raw:
            # fall back to the centre of the box
            raw.append(Cycle([Pulse(0.5 * (b.delta_lo + b.delta_hi), math.sqrt(b.duration_lo * b.duration_hi))
                              for b in problem.bounds]))
    seeds = []
    for c in raw:
        clipped = tuple(b.clip(p) for b, p in zip(problem.bounds, c.pulses))
        if clipped not in seeds:
            seeds.append(clipped)
    return [Cycle(s, problem.n_cycles) for s in seeds]


class _Evaluator:
    """Memoised objective with a shared rate-matrix pool and budget accounting."""

    def __init__(self, problem: OptimizationProblem):
        self.problem = problem
        self.caches: dict = {}
        self.seen: dict[tuple, tuple[float, str | None]] = {}
        self.bases: dict[tuple, int] = {}
        self.log: list[Evaluation] = []
        self.best_p0 = -math.inf
        self.best: tuple[Pulse, ...] | None = None
        self.n_min = 0

    @property
    def remaining(self) -> int:
        return self.problem.budget - len(self.log)

    def __call__(self, pulses: tuple[Pulse, ...], start: int) -> float:
        if pulses in self.seen:
            return self.seen[pulses][0]
        if self.remaining <= 0:
            raise _BudgetExhausted
        pr = self.problem
        err = None
        try:
            trace = simulate(Cycle(pulses, pr.n_cycles), pr.params, nbar=pr.nbar, n_max=pr.n_max,
                             quad_order=pr.quad_order, caches=self.caches, n_min=self.n_min, n_cap=pr.n_cap)
            p0 = trace.p0
            self.bases[pulses] = trace.n_max
            # later evaluations start from the basis that was needed so far
            self.n_min = max(self.n_min, trace.n_max)
            for size in [n for n in self.caches if n < self.n_min]:
                del self.caches[size]
        except NumericalError as exc:
            p0, err = -math.inf, str(exc)
            log.warning("evaluation failed: %s", exc)
        self.seen[pulses] = (p0, err)
        if self._better(p0, pulses):
            self.best_p0, self.best = p0, pulses
        self.log.append(Evaluation(len(self.log), pulses, p0, self.best_p0, start, err))
        log.info("evaluation %d (start %d): P0=%.6f best=%.6f %s", len(self.log) - 1, start, p0, self.best_p0,
                 [(q.delta, round(q.duration, 4)) for q in pulses])
        return p0

    def _better(self, p0: float, pulses) -> bool:
        if self.best is None:
            return True
        return p0 > self.best_p0 + IMPROVEMENT


class _BudgetExhausted(Exception):
    pass


def _neighbours(pulses: tuple[Pulse, ...], i: int, bounds: PulseBounds, what: str):
    p = pulses[i]
    if what == "delta":
        cands = [Pulse(p.delta + s, p.duration) for s in (1.0, -1.0)]
        cands = [c for c in cands if bounds.delta_lo <= c.delta <= bounds.delta_hi]
    else:
        cands = []
        for f in DURATION_STEPS:
            t = min(max(p.duration * f, bounds.duration_lo), bounds.duration_hi)
            if t != p.duration and all(t != c.duration for c in cands):
                cands.append(Pulse(p.delta, t))
    return [pulses[:i] + (c,) + pulses[i + 1 :] for c in cands]


def optimize_sequence(problem: OptimizationProblem) -> OptimizationResult:
    """Deterministic multi-start coordinate descent on the final ground-state population.

    Seeds are evaluated first.  Descent then starts from each seed in turn,
    best first.  One sweep visits every pulse's detuning (moves of +-1) and
    duration (factors 2, sqrt 2, 1/sqrt 2, 1/2, clipped to the bounds); the
    best move for a coordinate is taken only if it strictly improves the
    objective.  A start ends when a full sweep brings no improvement.
    Among seeds with exactly equal objective the shorter cycle wins.

    Failed evaluations (for example a tail-mass abort) score ``-inf``.  The
    run stops early, returning the best cycle so far with
    ``budget_exhausted`` set, once ``problem.budget`` distinct cycles have
    been simulated.
    """
    ev = _Evaluator(problem)
    seeds = seed_cycles(problem)
    exhausted = False
    converged_all = True
    scored = []
    try:
        for k, s in enumerate(seeds):
            scored.append((ev(s.pulses, k), s.duration, k, s.pulses))
    except _BudgetExhausted:
        exhausted = True
    if not scored:
        raise RuntimeError("no seed could be evaluated")
    # best seed first; among exactly equal objectives the shorter cycle wins
    scored.sort(key=lambda r: (-r[0], r[1], r[2]))
    if scored[0][0] == ev.best_p0:
        ev.best = scored[0][3]

    if not exhausted:
        for start, (_, _, _, pulses) in enumerate(scored):
            current, value = pulses, ev.seen[pulses][0]
            try:
                improved = True
                while improved:
                    improved = False
                    for i, b in enumerate(problem.bounds):
                        for what in ("delta", "duration"):
                            trials = [(ev(c, start), c) for c in _neighbours(current, i, b, what)]
                            if not trials:
                                continue
                            best_val, best_c = max(trials, key=lambda tc: tc[0])
                            if best_val > value + IMPROVEMENT:
                                current, value, improved = best_c, best_val, True
            except _BudgetExhausted:
                exhausted = True
                converged_all = False
                break

    best = ev.best
    result = OptimizationResult(
        cycle=Cycle(best, problem.n_cycles),
        p0=ev.best_p0,
        log=ev.log,
        budget_exhausted=exhausted,
        converged=converged_all and not exhausted,
        n_max=ev.bases.get(best),
    )
    if exhausted:
        result.notes.append(f"budget of {problem.budget} evaluations exhausted; returning best so far")
    return result
