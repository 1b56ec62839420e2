"""Exception types shared across the package."""


class ImarlError(Exception):
    """Base class for all package-specific errors."""


class ScenarioError(ImarlError):
    """A scenario descriptor failed to parse or validate."""


class ContractError(ImarlError):
    """A caller violated an operation's precondition."""


class StateError(ImarlError):
    """An operation was invoked on an object in the wrong state."""


class NumericError(ImarlError):
    """A numeric computation produced degenerate values (NaN/Inf)."""


class CheckpointError(ImarlError):
    """Base class for checkpoint persistence failures."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint file uses a format version this build cannot read."""


class IntegrityError(CheckpointError):
    """Checkpoint file is truncated, corrupted, or fails its checksum."""


class TransferIncompatibilityError(ImarlError):
    """A checkpoint's encoding schema does not match the target run."""
