"""Exception hierarchy shared across the package.

The CLI maps these onto distinct process exit codes (see cli.EXIT_CODES).
"""


class TowersimError(Exception):
    """Base class for all package errors."""


class DomainError(TowersimError, ValueError):
    """An argument is outside its documented domain (bad rank, bad range, ...)."""


class ConfigError(TowersimError, ValueError):
    """A run configuration failed cross-validation; message carries the field path."""


class ProtocolError(TowersimError, RuntimeError):
    """A simulated collective was fed malformed payload lists."""


class ShapeError(TowersimError, ValueError):
    """Array shapes disagree with the operation contract."""


class PlanError(TowersimError, ValueError):
    """Feature/tower/shard placement is inconsistent."""


class LayoutError(TowersimError, ValueError):
    """Output layout descriptors disagree (realign, comparisons)."""


class TableLookupError(TowersimError, ValueError):
    """Embedding lookup hit an out-of-range index or an invalid bag."""


class ConstraintError(TowersimError, ValueError):
    """A balance/capacity constraint is infeasible."""


class NumericError(TowersimError, ArithmeticError):
    """An iterative solver produced non-finite values."""


class EquivalenceError(TowersimError, AssertionError):
    """Two exchange pipelines that must agree did not."""


class IngestionError(TowersimError, ValueError):
    """An input file could not be parsed; message names file and position."""


class ReportError(TowersimError, ValueError):
    """A trace or breakdown could not be interpreted (unknown step label, ...)."""
