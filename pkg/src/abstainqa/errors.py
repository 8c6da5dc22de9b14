"""Exception hierarchy shared across the package."""


class AbstainQAError(Exception):
    """Base class for all package errors."""


class ConfigError(AbstainQAError):
    """Invalid or inconsistent configuration."""


class GenerationError(AbstainQAError):
    """World generation cannot satisfy its invariants."""


class InterventionError(AbstainQAError):
    """No valid intervention exists for the given question."""


class UnknownTokenError(AbstainQAError):
    """A question or option token is missing from the model vocabulary."""


class NumericError(AbstainQAError):
    """Non-finite values encountered during forward/backward passes."""


class TrainingDivergedError(AbstainQAError):
    """Training aborted on a non-finite loss."""
