"""Exception hierarchy shared across the package.

The CLI maps the three top-level families to exit codes: ``ConfigError`` -> 1,
``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class VeaError(Exception):
    pass


class ShapeError(VeaError, ValueError):
    pass


class ConfigError(VeaError, ValueError):
    pass


class DataError(VeaError):
    pass


class NumericalError(VeaError, ArithmeticError):
    pass


class IdxError(DataError, ValueError):
    """Malformed IDX stream. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class IdxMagicError(IdxError):
    pass


class IdxDtypeError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxTrailingDataError(IdxError):
    pass


class CheckpointError(VeaError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError, ShapeError):
    pass
