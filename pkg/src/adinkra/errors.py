"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: anything deriving from ``InputError``
or ``UsageError`` is a caller problem (exit 2); the rest are internal (exit 1).
"""


class AdinkraError(Exception):
    pass


class UsageError(AdinkraError):
    """The API or CLI was called in a way its contract forbids."""


class PreconditionError(UsageError, ValueError):
    """Shapes, ranges or other operation preconditions do not hold."""


class UnsupportedConfigurationError(UsageError, ValueError):
    pass


class ConfigurationError(UsageError, ValueError):
    pass


class SpecError(ConfigurationError):
    """A ModelSpec violates its invariants."""


class InputError(AdinkraError):
    """Unreadable or undecodable user input (image, dataset, file)."""


class CatalogError(InputError):
    pass


class DegenerateInputError(InputError, ValueError):
    pass


class NonFiniteLossError(AdinkraError, FloatingPointError):
    def __init__(self, epoch: int, batch_index: int, value: float):
        self.epoch = epoch
        self.batch_index = batch_index
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch index {batch_index}"
        )


class CheckpointError(InputError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointChecksumError):
    """File ended before the declared payload and checksum."""
