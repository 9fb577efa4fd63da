"""Exception types shared across the toolkit."""


class CgolabError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(CgolabError):
    """A CSV input violates its documented schema.

    Carries enough location detail (file, line, column) to find the
    offending cell in an editor.
    """

    def __init__(self, message, *, file=None, line=None, column=None):
        self.file = file
        self.line = line
        self.column = column
        where = file or "<input>"
        if line is not None:
            where += f":{line}"
        if column is not None:
            where += f" (column '{column}')"
        super().__init__(f"{where}: {message}")


class DuplicateKeyError(SchemaError):
    """Two rows share the same (stock, date) key."""


class NonMonotonicDateError(SchemaError):
    """Dates within one stock's rows are not strictly increasing."""


class EmptyPanelError(CgolabError):
    """An operation left the panel with no usable data."""


class InsufficientDataError(CgolabError):
    """Too few observations to evaluate an estimator's contract."""


class ZeroDispersionError(CgolabError):
    """A standardization step hit a zero-variance input."""


class UndefinedReferencePriceError(CgolabError):
    """Reference-price weight mass vanished (near-zero turnover window)."""


class RankDeficiencyError(CgolabError):
    """Regressor matrix is rank deficient; names the offending columns."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"rank-deficient design matrix; dependent column(s): {', '.join(self.columns)}")


class ConfigError(CgolabError):
    """Invalid pipeline or generator configuration."""
