"""Exception hierarchy shared across the package.

Three broad failure classes matter to callers: the model or configuration
is malformed (SpecError), the data cannot be used as requested (DataError),
or a numerical routine failed to produce a trustworthy answer (NumericError).
The command line maps the first two to exit code 1 and the last to exit
code 2.
"""


class MeglmError(Exception):
    """Base class for all package errors."""


class SpecError(MeglmError):
    """A model specification or configuration value is invalid."""


class DataError(MeglmError):
    """A dataset is malformed or inconsistent with the model spec."""


class NumericError(MeglmError):
    """A numerical routine failed (non-convergence, non-PD system, ...)."""
