"""Exception types shared across the package."""


class UsageError(ValueError):
    """Invalid arguments, configuration, or problem definitions."""


class SimulationError(RuntimeError):
    """A numerical failure inside a run (NaN, broken invariant)."""
