"""Error types shared across the RUPNet toolkit"""


class RupnetError(Exception):
    """Base class for every error raised by this package"""


class InvalidShapeError(RupnetError, ValueError):
    """A shape is degenerate or violates an operation's size rule"""


class ShapeMismatchError(RupnetError, ValueError):
    """Operands disagree on a dimension they must share"""


class InvalidArgumentError(RupnetError, ValueError):
    """An argument is outside the supported set"""


class ConfigurationError(RupnetError, ValueError):
    """A network, training or run configuration is invalid"""


class CorruptCheckpointError(RupnetError):
    """Checkpoint bytes do not follow the RUPN format"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DecodeError(RupnetError):
    """An image file could not be decoded"""

    def __init__(self, message: str, path: str = "", offset: int = 0):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")
        self.path = path
        self.offset = offset


class PairingError(RupnetError):
    """An image has no mask with the same stem, or the reverse"""

    def __init__(self, message: str, stem: str):
        super().__init__(f"{message}: {stem}")
        self.stem = stem


class EmptyDatasetError(RupnetError):
    """A dataset or directory holds no samples"""


class NumericError(RupnetError, ArithmeticError):
    """NaN/Inf values or a failed gradient check"""
