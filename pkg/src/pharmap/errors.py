"""Exception types shared across the package.

The command line front end maps these onto exit codes: usage and domain
problems exit with 2, failed searches / constructions / certifications
exit with 1.
"""


class UsageError(ValueError):
    """An argument or input file violates a documented precondition."""


class DomainError(ValueError):
    """A numeric input lies outside the mathematical domain of an operation."""


class SearchExhaustedError(RuntimeError):
    """A doubling search hit its cap without satisfying the target inequality."""


class InfeasibleError(RuntimeError):
    """A root-find bracket is empty; the requested construction cannot proceed."""


class ConstructionError(RuntimeError):
    """An internal consistency check failed while assembling an object."""


class DivergenceError(RuntimeError):
    """An iteration produced a non-finite quantity."""
