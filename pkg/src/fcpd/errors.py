"""Exception types shared across the package."""


class FcpdError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(FcpdError, ValueError):
    """An argument is outside its documented domain."""


class InvalidSplitError(InvalidArgumentError):
    """Split index k outside 1..N-1."""


class InsufficientSampleError(InvalidArgumentError):
    """Too few curves for the requested operation."""


class IllPosedFitError(FcpdError, ValueError):
    """Basis fit is rank deficient (too few distinct abscissae)."""


class DegenerateCorrectionError(InvalidArgumentError):
    """Bias correction factor undefined for n <= 2."""


class DegenerateKernelError(FcpdError, ValueError):
    """Kernel has no eigenvalue above the numerical floor (constant data)."""


class DegenerateDataError(DegenerateKernelError):
    """Curve sample carries no usable variation at some split."""


class TableMissError(FcpdError, KeyError):
    """Critical-value table has no entry or retained sample for the request."""


class ParseError(FcpdError, ValueError):
    """Input file could not be parsed; message carries the location."""
