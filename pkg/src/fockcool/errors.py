"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """Base for failures that mean a result cannot be trusted (CLI exit code 2)."""


class TruncationError(NumericalError):
    """The intermediate Fock sum did not converge inside the chosen cutoff."""


class QuadratureError(NumericalError):
    """Doubling the angular quadrature order moved the result too much."""


class TailMassError(NumericalError):
    """Population leaked into the top of the truncated basis during a run."""

    def __init__(self, message: str, cycle: int | None = None, tail_mass: float | None = None):
        super().__init__(message)
        self.cycle = cycle
        self.tail_mass = tail_mass


class NoFeasibleDetuning(ValueError):
    """No blue detuning in the scanned range meets the emptying-pulse criteria."""


class ConfigError(ValueError):
    """Malformed run configuration (CLI exit code 1)."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key
