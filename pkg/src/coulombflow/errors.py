"""Exception hierarchy shared by the whole package.

``ConfigError`` marks bad user input (CLI exit code 2), ``NumericalError``
marks a run that started from valid input but hit a numerical safeguard
(CFL violation, halving exhaustion, broken invariant; CLI exit code 3).
"""


class CoulombFlowError(Exception):
    """Base class for all package errors."""


class ConfigError(CoulombFlowError):
    """Invalid configuration or argument; names the violated precondition."""


class NumericalError(CoulombFlowError):
    """A numerical safeguard fired; names the violated invariant."""
