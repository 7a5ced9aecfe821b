"""Exception hierarchy shared by all pancseg modules.

Validation problems (bad arguments, mismatched grids, malformed specs) map
to CLI exit code 1; file format and I/O problems map to exit code 2.
"""


class PancsegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PancsegError):
    """Invalid arguments, configuration or data semantics."""


class GridMismatchError(ValidationError):
    """Two volumes that must share a voxel grid do not."""


class LabelSetError(ValidationError):
    """A label volume contains values outside the declared label set."""


class EmptySurfaceError(ValidationError):
    """A surface metric was requested for an empty mask."""


class ConfigError(ValidationError):
    """Bad configuration file, flag value or unknown key."""


class BudgetExceededError(ValidationError):
    """Subset enumeration would exceed the configured budget."""


class FormatError(PancsegError):
    """A file exists but its contents cannot be parsed."""


class HeaderLimitError(FormatError):
    """A volume cannot be represented within NIfTI-1 header limits."""
