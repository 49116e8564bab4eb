"""Exception hierarchy shared by every module."""


class TcBlstmError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TcBlstmError, ValueError):
    pass


class ParameterError(TcBlstmError, ValueError):
    pass


class ConfigError(TcBlstmError, ValueError):
    pass


class LabelError(TcBlstmError, ValueError):
    pass


class InputError(TcBlstmError, ValueError):
    pass


class UsageError(TcBlstmError, RuntimeError):
    pass


class FormatError(TcBlstmError, ValueError):
    pass


class CorruptionError(FormatError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ProtocolError(TcBlstmError, ValueError):
    pass


class OracleError(TcBlstmError, ArithmeticError):
    pass


class ShardFailure(TcBlstmError, RuntimeError):
    pass
