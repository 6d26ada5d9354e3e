"""Exception types shared across the package."""


class ShapesemError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ShapesemError):
    """Invalid configuration value or combination."""


class DimensionError(ShapesemError):
    """Shape/size mismatch between arrays or network layers."""


class LayoutError(ShapesemError):
    """ROI layout is malformed (missing names, overlap, gaps)."""


class DataError(ShapesemError):
    """Dataset content violates its invariants or a file is unreadable."""


class GraphError(ShapesemError):
    """Misuse of the autodiff graph (e.g. backward on a non-scalar)."""


class NumericalError(ShapesemError):
    """Non-finite value encountered where finiteness is required."""
