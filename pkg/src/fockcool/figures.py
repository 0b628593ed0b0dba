"""Runs behind the figure-reproduction commands."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SimulationTrace, simulate
from .errors import NumericalError
from .protocol import FIG2_DURATION, build_cycle
from .rates import PhysicalParams, emptying_rates

log = logging.getLogger(__name__)

__all__ = ["FIG2_ETAS", "Fig2Result", "fig2_sweep", "fig3_runs", "fig4_curves"]

FIG2_ETAS = tuple(round(0.1 * k, 1) for k in range(1, 41))
FIG2_SCHEMES = ("fig2a", "fig2b", "fig2c")


@dataclass
class Fig2Result:
    etas: list[float]
    p0: np.ndarray  # (len(etas), 3), NaN where a run failed
    duration: float
    n_cycles: int
    failures: list[tuple[float, str, str]] = field(default_factory=list)
    bases: dict[tuple[float, str], int] = field(default_factory=dict)
    max_norm_error: float = 0.0
    min_population: float = 0.0

    def rows(self):
        return [(eta, *self.p0[i]) for i, eta in enumerate(self.etas)]


def _fig2_point(eta, params, duration, nbar, n_cycles, n_cap, quad_order):
    p = dataclasses.replace(params, eta=eta)
    caches: dict = {}
    out = []
    for scheme in FIG2_SCHEMES:
        cycle = build_cycle(scheme, eta, p, n_cycles, duration)
        try:
            trace = simulate(cycle, p, nbar=nbar, caches=caches, n_cap=n_cap, quad_order=quad_order)
            out.append((scheme, trace, None))
        except NumericalError as exc:
            log.warning("fig2 eta=%g %s failed: %s", eta, scheme, exc)
            out.append((scheme, None, str(exc)))
    return out


def fig2_sweep(
    params: PhysicalParams,
    etas=FIG2_ETAS,
    duration: float = FIG2_DURATION,
    nbar: float = 6.0,
    n_cycles: int = 200,
    jobs: int = 1,
    n_cap: int | None = None,
    quad_order: int | None = None,
) -> Fig2Result:
    """Final P0 of schemes (a), (b), (c) over a grid of eta.

    Points run concurrently when ``jobs > 1``; rows always come back in eta
    order.  A run that fails (for example because the basis would have to
    exceed ``n_cap``) is reported as NaN and listed in ``failures``.
    """
    etas = [float(e) for e in etas]
    args = (params, duration, nbar, n_cycles, n_cap, quad_order)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(lambda e: _fig2_point(e, *args), etas))
    else:
        points = [_fig2_point(e, *args) for e in etas]

    res = Fig2Result(etas, np.full((len(etas), 3), np.nan), duration, n_cycles)
    for i, (eta, point) in enumerate(zip(etas, points)):
        for j, (scheme, trace, err) in enumerate(point):
            if trace is None:
                res.failures.append((eta, scheme, err))
                continue
            res.p0[i, j] = trace.p0
            res.bases[(eta, scheme)] = trace.n_max
            res.max_norm_error = max(res.max_norm_error, trace.max_norm_error)
            res.min_population = min(res.min_population, trace.min_population)
    return res


def fig3_runs(
    params: PhysicalParams | None = None,
    nbar: float = 6.0,
    n_cycles: int = 200,
    scheme_b: str = "fig3b",
    quad_order: int | None = None,
) -> tuple[SimulationTrace, SimulationTrace]:
    """The single-pulse and four-pulse eta = 5 runs, sharing rate matrices."""
    p = PhysicalParams(eta=5.0) if params is None else params
    caches: dict = {}
    a = simulate(build_cycle("fig3a", p.eta, p, n_cycles), p, nbar=nbar, caches=caches, quad_order=quad_order)
    b = simulate(build_cycle(scheme_b, p.eta, p, n_cycles), p, nbar=nbar, caches=caches, quad_order=quad_order)
    return a, b


def fig4_curves(params: PhysicalParams | None = None, deltas=(7.0, 9.0), n_top: int = 60) -> dict[float, np.ndarray]:
    """Emptying rates of levels 0..n_top for each blue detuning."""
    p = PhysicalParams(eta=5.0) if params is None else params
    return {float(d): emptying_rates(float(d), p, n_top) for d in deltas}


def ground_ratio(curve: np.ndarray) -> float:
    return float(curve[0] / curve[1]) if curve[1] > 0 else math.inf
