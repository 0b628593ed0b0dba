"""Run configuration: flat ``key = value`` text with dotted keys.

Example::

    # fig3b at eta = 5
    params.eta = 5.0
    params.Gamma = 0.1
    params.gamma_ratio = 0.5
    initial.nbar = 6
    cycle.pulses = [(-24, 0.6), (-25, 0.6), (7, 0.2), (9, 0.2)]
    cycle.n_cycles = 200

Values are Python literals; a bare word such as ``dipole`` or ``auto`` is
read as a string.  Everything after an unquoted ``#`` is a comment.
"""

from __future__ import annotations

import ast
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .dynamics import Cycle, Pulse
from .errors import ConfigError
from .protocol import SCHEMES, build_cycle
from .rates import ANGULAR_KINDS, PhysicalParams

__all__ = ["RunConfig", "parse_config", "load_config", "format_config"]

KEYS = (
    "params.eta",
    "params.Gamma",
    "params.gamma_ratio",
    "params.Omega",
    "params.angular",
    "basis.n_max",
    "initial.nbar",
    "initial.vector",
    "cycle.scheme",
    "cycle.pulses",
    "cycle.n_cycles",
    "cycle.fig2_duration",
    "numerics.quad_order",
    "output.dir",
)


@dataclass
class RunConfig:
    eta: float | None = None
    Gamma: float = 0.1
    gamma_ratio: float = 0.5
    Omega: float = 0.01
    angular: str = "dipole"
    n_max: int | None = None
    nbar: float | None = 6.0
    vector: tuple[float, ...] | None = None
    scheme: str | None = None
    pulses: tuple[tuple[float, float], ...] | None = None
    n_cycles: int = 200
    fig2_duration: float = 0.6
    quad_order: int | None = None
    out_dir: str | None = None

    def physical_params(self) -> PhysicalParams:
        if self.eta is None:
            raise ConfigError("missing required key", key="params.eta")
        return PhysicalParams.from_ratio(self.eta, self.Gamma, self.gamma_ratio,
                                         Omega=self.Omega, angular=self.angular)

    def cycle(self) -> Cycle:
        if self.pulses is not None:
            return Cycle(tuple(Pulse(d, t) for d, t in self.pulses), self.n_cycles)
        if self.scheme is None:
            raise ConfigError("give cycle.scheme or cycle.pulses", key="cycle.scheme")
        return build_cycle(self.scheme, self.eta, self.physical_params(), self.n_cycles, self.fig2_duration)


def _split_comment(text: str) -> str:
    quote = None
    for i, ch in enumerate(text):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            return text[:i]
    return text


def _literal(raw: str, line: int, key: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        if raw.replace("_", "").replace("-", "").isalnum():
            return raw
        raise ConfigError(f"cannot parse value {raw!r}", line, key) from None


def _number(value, line, key, positive=True, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", line, key)
    if not math.isfinite(value):
        raise ConfigError("value must be finite", line, key)
    if integer and int(value) != value:
        raise ConfigError(f"expected an integer, got {value!r}", line, key)
    if positive and value <= 0:
        raise ConfigError(f"must be positive, got {value!r}", line, key)
    return int(value) if integer else float(value)


def _apply(cfg: RunConfig, key: str, value, line: int | None) -> None:
    if key == "params.eta":
        cfg.eta = _number(value, line, key, positive=False)
        if cfg.eta < 0:
            raise ConfigError("eta must be non-negative", line, key)
    elif key == "params.Gamma":
        cfg.Gamma = _number(value, line, key)
    elif key == "params.gamma_ratio":
        cfg.gamma_ratio = _number(value, line, key)
        if cfg.gamma_ratio > 1:
            raise ConfigError("gamma_ratio must be at most 1 (gamma <= Gamma)", line, key)
    elif key == "params.Omega":
        cfg.Omega = _number(value, line, key)
    elif key == "params.angular":
        if value not in ANGULAR_KINDS:
            raise ConfigError(f"expected one of {ANGULAR_KINDS}, got {value!r}", line, key)
        cfg.angular = value
    elif key == "basis.n_max":
        cfg.n_max = None if value == "auto" else _number(value, line, key, integer=True)
    elif key == "initial.nbar":
        cfg.nbar = _number(value, line, key, positive=False)
        if cfg.nbar < 0:
            raise ConfigError("nbar must be non-negative", line, key)
        cfg.vector = None
    elif key == "initial.vector":
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError("expected a non-empty list of probabilities", line, key)
        vec = tuple(_number(v, line, key, positive=False) for v in value)
        if min(vec) < 0:
            raise ConfigError("probabilities must be non-negative", line, key)
        if abs(sum(vec) - 1.0) > 1e-9:
            raise ConfigError(f"probabilities sum to {sum(vec):.12g}, not 1 within 1e-9", line, key)
        cfg.vector = vec
        cfg.nbar = None
    elif key == "cycle.scheme":
        if value not in SCHEMES:
            raise ConfigError(f"unknown scheme {value!r}; choose from {', '.join(SCHEMES)}", line, key)
        cfg.scheme = value
    elif key == "cycle.pulses":
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError("expected a non-empty list of (delta, duration) pairs", line, key)
        pulses = []
        for item in value:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ConfigError(f"pulse {item!r} is not a (delta, duration) pair", line, key)
            pulses.append((_number(item[0], line, key, positive=False), _number(item[1], line, key)))
        cfg.pulses = tuple(pulses)
    elif key == "cycle.n_cycles":
        cfg.n_cycles = _number(value, line, key, positive=False, integer=True)
        if cfg.n_cycles < 0:
            raise ConfigError("n_cycles must be non-negative", line, key)
    elif key == "cycle.fig2_duration":
        cfg.fig2_duration = _number(value, line, key)
    elif key == "numerics.quad_order":
        cfg.quad_order = None if value == "auto" else _number(value, line, key, integer=True)
        if cfg.quad_order is not None and cfg.quad_order < 32:
            raise ConfigError("quad_order must be at least 32", line, key)
    elif key == "output.dir":
        if not isinstance(value, str):
            raise ConfigError("expected a path", line, key)
        cfg.out_dir = value
    else:
        raise ConfigError(f"unknown key; known keys are {', '.join(KEYS)}", line, key)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse configuration text on top of ``base`` (defaults if omitted).

    Raises
    ------
    ConfigError
        With the offending line number and key.
    """
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = _split_comment(raw).strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, _, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError("missing key", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", lineno, key)
        seen[key] = lineno
        if not value:
            raise ConfigError("missing value", lineno, key)
        _apply(cfg, key, _literal(value, lineno, key), lineno)
    if "initial.nbar" in seen and "initial.vector" in seen:
        raise ConfigError("set only one of initial.nbar and initial.vector", seen["initial.vector"], "initial.vector")
    if "cycle.scheme" in seen and "cycle.pulses" in seen:
        raise ConfigError("set only one of cycle.scheme and cycle.pulses", seen["cycle.pulses"], "cycle.pulses")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def format_config(cfg: RunConfig) -> str:
    """Config text that ``parse_config`` reads back to the same run."""
    lines = [
        f"params.eta = {cfg.eta!r}",
        f"params.Gamma = {cfg.Gamma!r}",
        f"params.gamma_ratio = {cfg.gamma_ratio!r}",
        f"params.Omega = {cfg.Omega!r}",
        f"params.angular = {cfg.angular}",
        f"basis.n_max = {'auto' if cfg.n_max is None else cfg.n_max}",
    ]
    if cfg.vector is not None:
        lines.append(f"initial.vector = {list(cfg.vector)!r}")
    else:
        lines.append(f"initial.nbar = {cfg.nbar!r}")
    if cfg.pulses is not None:
        lines.append(f"cycle.pulses = {[tuple(p) for p in cfg.pulses]!r}")
    elif cfg.scheme is not None:
        lines.append(f"cycle.scheme = {cfg.scheme}")
        if cfg.scheme.startswith("fig2"):
            lines.append(f"cycle.fig2_duration = {cfg.fig2_duration!r}")
    lines.append(f"cycle.n_cycles = {cfg.n_cycles}")
    if cfg.quad_order is not None:
        lines.append(f"numerics.quad_order = {cfg.quad_order}")
    return "\n".join(lines) + "\n"
