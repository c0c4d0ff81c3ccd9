"""Exception hierarchy shared by every module of the package."""


class StereoSimError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(StereoSimError, ValueError):
    pass


class SizeMismatch(StereoSimError, ValueError):
    pass


class EmptyPalette(StereoSimError, ValueError):
    pass


class PlacementOverflow(StereoSimError, RuntimeError):
    pass


class BadDensity(StereoSimError, ValueError):
    pass


class BadKernel(StereoSimError, ValueError):
    pass


class DegenerateConfiguration(StereoSimError, ValueError):
    pass


class NoConsensus(StereoSimError, RuntimeError):
    pass


class EmptyInput(StereoSimError, ValueError):
    pass


class ConfigError(StereoSimError, ValueError):
    pass


class MeshLoadError(StereoSimError, IOError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path


class DepthOutOfRange(StereoSimError, ValueError):
    pass


class DecodeError(StereoSimError, IOError):
    """Raised when a stored image cannot be decoded (truncated, wrong format)."""
