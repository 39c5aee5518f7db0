"""Exception types raised across the package."""


class ScriptHmmError(Exception):
    """Base class for all package errors."""


class CorpusError(ScriptHmmError, ValueError):
    """A corpus or narrative is malformed."""


class ModelFormatError(ScriptHmmError, ValueError):
    """A model, corpus or side file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownSymbolError(ScriptHmmError, KeyError):
    def __init__(self, symbol, position):
        self.symbol = symbol
        self.position = position
        super().__init__(f"symbol {symbol!r} at position {position} is not in the model alphabet")

    def __str__(self):
        return self.args[0]


class UnreachableError(ScriptHmmError):
    """The observation sequence has zero probability under the model."""


class SamplingError(ScriptHmmError, RuntimeError):
    pass


class StructureError(ScriptHmmError, ValueError):
    """A structure change is not applicable to the model."""
