"""Exception hierarchy shared by every vnnkit module."""


class VnnError(Exception):
    """Base class for all library errors."""


class ShapeError(VnnError, ValueError):
    """Array dimensions disagree with what an operation expects."""


class InvalidDataError(VnnError, ValueError):
    """Input data contains non-finite or otherwise unusable entries."""


class DegenerateSampleError(VnnError, ValueError):
    """Too few samples (or zero variance) for the requested estimate."""


class ZeroSpectrumError(VnnError, ValueError):
    """Covariance spectrum is numerically zero and cannot be normalized."""


class DegenerateSpectrumError(VnnError, ValueError):
    """Repeated eigenvalues make a spectral interpolation ill-posed."""


class NumericError(VnnError, ArithmeticError):
    """A forward/backward pass or training step produced non-finite values."""


class ModelFormatError(VnnError, ValueError):
    """A model document is truncated, malformed, or fails its checksum."""


class VersionError(ModelFormatError):
    """A model document declares an unsupported format version."""


class ConfigError(VnnError, ValueError):
    """Invalid run configuration or experiment parameters."""


class IngestError(VnnError, ValueError):
    """A CSV input file does not match the expected schema."""
