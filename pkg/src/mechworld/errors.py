"""Exception types shared across the package."""


class MechworldError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MechworldError):
    """Invalid configuration value, file, or combination of settings."""


class ShapeError(MechworldError):
    """Array dimensions do not match what an operation requires."""


class TrainingError(MechworldError):
    """Non-finite loss or gradient encountered during optimization."""


class SimulationError(MechworldError):
    """Simulator state became invalid (non-finite values)."""


class GenerationError(MechworldError):
    """World initialization failed, e.g. rejection sampling exhausted."""


class DatasetError(MechworldError):
    """Dataset file is missing, corrupt, or fails validation."""


class SamplingError(MechworldError):
    """Batch sampling was asked for something the data cannot provide."""
