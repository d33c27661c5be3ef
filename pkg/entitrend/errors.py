"""Exceptions raised by entitrend beyond plain argument errors."""


class EntitrendError(Exception):
    """The base class of every domain error of this package."""


class ConfigError(EntitrendError):
    """An experiment configuration is inconsistent or malformed."""


class DegenerateLabelsError(EntitrendError):
    """Training labels contain only one class."""


class TrainingDivergedError(EntitrendError):
    """A training loss became non-finite."""
