"""Exceptions raised across the simulator."""


class CellCacheError(Exception):
    """Base class for all simulator errors."""


class InvalidConfig(CellCacheError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ZeroRate(CellCacheError, ArithmeticError):
    """A request cannot be served because its link rate is zero."""


class EigensolverFailure(CellCacheError):
    pass


class EmptyCache(CellCacheError):
    pass


class ContentTooLarge(CellCacheError, ValueError):
    pass


class ParseError(InvalidConfig):
    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class UnknownKey(ParseError):
    pass


class MissingAxis(CellCacheError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing axis"


# configuration values that parse but fail validation
ValidationError = InvalidConfig
