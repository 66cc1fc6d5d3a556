# Error hierarchy for the simulation pipeline


class TurboLynxError(Exception):
    """Base class for every error raised by the pipeline."""


class ConfigurationError(TurboLynxError):
    """Unsupported or inconsistent parameters (alphabet size, antennas, code profile)."""


class FramingError(TurboLynxError):
    """Bit, symbol or codeword lengths that do not line up."""


class InvalidCavityError(TurboLynxError):
    """An extrinsic (cavity) Gaussian with non-positive variance reached the demapper."""


class InstanceTooLargeError(TurboLynxError):
    """Exhaustive enumeration requested above the allowed size."""


class NumericalError(TurboLynxError):
    """A system that must be Hermitian positive definite failed to factorize."""
