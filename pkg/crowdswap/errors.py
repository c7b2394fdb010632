"""
Exception hierarchy for the crowdswap simulator.

Library code raises these; the command-line front end maps ConfigError to
exit code 2 and everything else to exit code 1.
"""


class CrowdswapError(Exception):
    """Base class for all simulator errors."""


class NonStochasticMatrixError(CrowdswapError, ValueError):
    pass


class DegenerateBBoxError(CrowdswapError, ValueError):
    pass


class OutOfAreaError(CrowdswapError, ValueError):
    pass


class AreaTooSmallError(CrowdswapError, ValueError):
    pass


class EmptyFileError(CrowdswapError, ValueError):
    pass


class TraceParseError(CrowdswapError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownKeyError(CrowdswapError, KeyError):
    pass


class DoubleResolutionError(CrowdswapError, KeyError):
    pass


class UnsupportedError(CrowdswapError, TypeError):
    pass


class MissingOutcomeError(CrowdswapError, KeyError):
    pass


class ConfigError(CrowdswapError, ValueError):
    """Invalid configuration. `field` is a dotted path, `line` is best effort."""

    def __init__(self, field, message, line=None):
        self.field = field
        self.message = message
        self.line = line
        where = f"{field}" if line is None else f"{field} (line {line})"
        super().__init__(f"{where}: {message}")
