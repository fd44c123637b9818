"""Exception hierarchy shared across the package."""


class MixedAvError(Exception):
    """Base class for all package errors."""


class DomainError(MixedAvError, ValueError):
    """An argument lies outside the domain of a function."""


class CFLError(MixedAvError, ValueError):
    """A time step exceeds the stability bound of the explicit scheme."""


class IntegrityError(MixedAvError, RuntimeError):
    """Non-finite or out-of-range numbers appeared during a computation."""


class ConfigError(MixedAvError, ValueError):
    """A configuration failed validation.

    ``problems`` holds one message per violated field.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class EpisodeDoneError(MixedAvError, RuntimeError):
    """``step`` was called on a finished episode."""


class CheckpointError(MixedAvError, OSError):
    """A checkpoint file is missing, unreadable or inconsistent."""
