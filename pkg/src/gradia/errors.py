"""Exception taxonomy shared across the workbench."""


class GradiaError(Exception):
    """Base class for all workbench errors."""


class ConfigurationError(GradiaError):
    """Invalid model, dataset, or training configuration."""


class InputError(GradiaError):
    """Malformed or out-of-range input to an operation."""


class DataError(GradiaError):
    """Dataset or annotation records violate a required invariant."""


class CapabilityError(GradiaError):
    """A requested differentiation capability is not available."""


class UndefinedMetricError(GradiaError):
    """Metric requested over an empty population."""


class GenerationError(GradiaError):
    """Synthetic scene could not be rendered within constraints."""


class TrainingError(GradiaError):
    """Optimization diverged or produced non-finite values."""
