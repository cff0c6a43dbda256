"""Exception hierarchy shared by every stage of the pipeline."""


class SteamError(Exception):
    """Base class for all package errors."""


class ParseError(SteamError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(SteamError, ValueError):
    pass


class LabelError(SteamError, ValueError):
    pass


class DataError(SteamError, ValueError):
    pass


class IoError(SteamError, OSError):
    pass


class WindowError(SteamError, ValueError):
    pass


class NumericalError(SteamError, ArithmeticError):
    pass


class RegionError(SteamError, ValueError):
    pass


class ConfigError(SteamError, ValueError):
    pass


class CapacityError(SteamError):
    pass
