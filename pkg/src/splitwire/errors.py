"""Exception hierarchy shared by all splitwire modules."""


class SplitwireError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(SplitwireError):
    """A topology, weights, or wire payload could not be parsed."""


class ValidationError(SplitwireError):
    """A parsed network violates a structural invariant."""


class ShapeError(ValidationError):
    """Shape inference failed (inconsistent Concat/EltwiseAdd, bad conv arithmetic)."""


class UnknownLayer(SplitwireError):
    """A layer name does not exist in the network."""


class EmptyCalibration(SplitwireError):
    """Calibration saw no values."""


class NonFiniteInput(SplitwireError):
    """A tensor contained NaN or Inf where finite values are required."""


class ShapeMismatch(SplitwireError):
    """Runtime tensor shape does not match what a layer or engine expects."""


class MissingQuantParams(SplitwireError):
    """An INT8 engine lacks activation quantization params for a tensor."""


class BoundaryMismatch(SplitwireError):
    """Transmitted blobs do not match the receiving engine's expected inputs."""


class InvalidPoint(SplitwireError):
    """A partition point is not usable for the requested operation."""


class MissingProfileEntry(SplitwireError):
    """The profile table lacks a latency entry for some layer."""


class NoCandidates(SplitwireError):
    """Candidate generation produced no usable partition points."""


class ChecksumError(SplitwireError):
    """A wire message failed CRC verification."""
