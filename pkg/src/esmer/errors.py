"""Exception types shared across the package."""


class EsmerError(Exception):
    """Base class for all errors raised by this package."""


class RejectedInputError(EsmerError, ValueError):
    """An argument violates an operation's precondition."""


class NumericFaultError(EsmerError, ArithmeticError):
    """A non-finite value appeared in a loss or gradient."""

    def __init__(self, message, layer=None, diagnostics=None):
        super().__init__(message)
        self.layer = layer
        self.diagnostics = diagnostics or {}


class FormatError(EsmerError, ValueError):
    """A data file does not follow its declared binary format."""


class ConfigError(EsmerError, ValueError):
    """An experiment configuration failed validation.

    ``errors`` holds every problem found, not only the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ComparisonError(EsmerError, ValueError):
    """Run groups handed to ``compare`` were produced under different settings."""


class AbsentProbeError(EsmerError, LookupError):
    """A figure was requested whose probe was not enabled in the run config."""

    def __init__(self, figure, config_key):
        self.figure = figure
        self.config_key = config_key
        super().__init__(
            f"figure {figure!r} needs a trace that was not recorded; enable {config_key!r}"
        )
