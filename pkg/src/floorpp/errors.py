"""Exception types shared across the package.

The CLI maps these onto stable exit codes: I/O and format problems -> 1,
config/schema problems -> 2, numeric failures -> 3.
"""


class FloorPPError(Exception):
    """Base class for package errors."""


class CloudFormatError(FloorPPError):
    """Point cloud file is malformed (reported with line numbers)."""


class CheckpointError(FloorPPError):
    """Checkpoint file has a bad magic, version, or structure."""


class PlanSchemaError(FloorPPError):
    """Plan JSON violates the interchange schema."""


class ConfigError(FloorPPError):
    """Invalid or unknown configuration value."""


class TrainingDiverged(FloorPPError):
    """Loss became non-finite; the last good checkpoint path is attached."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
