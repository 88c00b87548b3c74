"""Error types shared across the package."""


class SizingError(ValueError):
    """An array has dimensions incompatible with the requested operation."""


class ZeroMassKernelError(ValueError):
    """A kernel with (near-)zero total mass where moments are required."""


class DegenerateKernelError(ValueError):
    """Kernel post-processing removed essentially all mass."""


class UnsupportedScaleError(ValueError):
    """A scale factor outside the supported set."""


class AdapterError(RuntimeError):
    """An external super-resolution adapter failed to produce output."""


class InsufficientDataError(ValueError):
    """Too few data points for the requested statistic."""
