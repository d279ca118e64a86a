"""Exception hierarchy shared across the simulator and learner.

Each family maps onto a CLI exit status so the pipeline can report
failures without tracebacks.
"""
from __future__ import annotations


class BetsimError(Exception):
    exit_code = 1


class ConfigError(BetsimError, ValueError):
    """A configuration value is missing or invalid.

    ``field`` names the offending key so operators can find it.
    """

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(BetsimError):
    exit_code = 3


class TrainingError(BetsimError):
    exit_code = 4


class RaceStateError(BetsimError, RuntimeError):
    pass


class ExchangeError(BetsimError):
    pass


class OrderRejected(ExchangeError):
    pass


class AuthorizationError(ExchangeError):
    pass
