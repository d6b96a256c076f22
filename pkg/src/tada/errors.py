"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies.
"""


class TadaError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TadaError):
    """Invalid, missing, or unparseable run configuration."""


class DimensionError(TadaError, ValueError):
    """Operands act on different numbers of sites."""


class BranchCutError(TadaError, ArithmeticError):
    """A unitary eigenphase reached the log branch cut; shrink the window."""


class ConvergenceError(TadaError, ArithmeticError):
    """An iterative refinement failed to converge within its budget."""


class FreezeHalt(TadaError):
    """Controller configured with on_freeze='halt' hit a frozen step."""
