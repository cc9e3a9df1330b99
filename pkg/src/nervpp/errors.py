"""Exception hierarchy shared by the codec modules and the CLI."""


class NervError(Exception):
    """Base class for every error raised on purpose by nervpp."""


class ShapeError(NervError, ValueError):
    """Tensor or parameter shapes do not satisfy an operation's contract."""


class DataError(NervError, ValueError):
    """Malformed input data: corrupt bitstream, bad CSV, inconsistent frames."""


class NumericError(NervError, FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""
