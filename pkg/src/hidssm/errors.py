"""Exception types shared across the package.

The CLI maps these onto its exit-code taxonomy, so library code should
raise the most specific type that applies.
"""


class HidSsmError(Exception):
    """Base class for all package errors."""


class ConfigError(HidSsmError):
    """Inconsistent dimensions or an invalid configuration value."""


class PartitionError(HidSsmError):
    """A segment partition that is not contiguous, ordered, and covering."""


class DataError(HidSsmError):
    """Dataset, manifest, or file-level problems."""


class FeatureFileError(DataError):
    """A feature file that cannot be parsed (bad magic, truncation, mismatched lengths)."""


class NumericsError(HidSsmError):
    """Non-finite values produced where finite ones are required."""


class ScanOverflowError(NumericsError):
    """Non-finite state during a recurrent scan.

    Carries the first offending timestep.
    """

    def __init__(self, timestep: int, message: str | None = None):
        self.timestep = timestep
        super().__init__(message or f"non-finite scan state first observed at timestep {timestep}")


class DivergenceError(NumericsError):
    """Training loss exceeded the divergence threshold or became non-finite."""


class SizeCapError(HidSsmError):
    """Dense mixer materialization was requested above the configured size cap."""
