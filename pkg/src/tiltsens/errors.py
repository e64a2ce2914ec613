"""Exception types shared across modules."""


class DataError(ValueError):
    """Input data or arguments failed validation."""


class NumericalGuardError(ArithmeticError):
    """A computation hit a guard (undefined variance, enumeration size limit)."""


class SweepError(RuntimeError):
    """A grid cell failed; ``cell`` records its coordinates."""

    def __init__(self, cell: dict, cause: Exception):
        self.cell = cell
        self.cause = cause
        where = ", ".join(f"{k}={v!r}" for k, v in cell.items())
        super().__init__(f"cell ({where}): {cause}")


class OracleMismatch(AssertionError):
    """An oracle cross-check disagreed with the closed-form engine."""
