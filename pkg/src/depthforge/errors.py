"""Exception hierarchy shared across the package."""


class DepthforgeError(Exception):
    """Base class for all errors raised by this package."""


class DescriptorError(DepthforgeError):
    """Malformed or inconsistent network descriptor."""


class MergeError(DepthforgeError):
    """Kernel composition is undefined for the given operands."""


class TableError(DepthforgeError):
    """Cost table construction or lookup failure."""


class KeepSetError(DepthforgeError):
    """No keep set can realize the requested merged kernel size."""


class InfeasibleBudgetError(DepthforgeError):
    """No plan satisfies the latency budget.

    ``min_units`` carries the smallest achievable discretized latency, or
    ``None`` when no admissible segmentation exists at all.
    """

    def __init__(self, message: str, min_units: int | None = None):
        super().__init__(message)
        self.min_units = min_units
