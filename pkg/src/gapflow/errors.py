"""Exception types shared across the package."""


class GapflowError(Exception):
    """Base class for all package errors."""


class DiffcoreError(GapflowError):
    """Misuse of the autodiff tape (wrong tape, non-scalar loss, double mark, ...)."""


class ShapeError(DiffcoreError):
    """Operand shapes invalid for an op."""

    def __init__(self, op_kind, shape_a, shape_b):
        self.op_kind = op_kind
        self.shape_a = tuple(shape_a) if shape_a is not None else None
        self.shape_b = tuple(shape_b) if shape_b is not None else None
        super().__init__(f"{op_kind}: incompatible shapes {self.shape_a} and {self.shape_b}")


class DynamicsError(GapflowError):
    """Invalid state or parameters fed to the dynamics."""


class RenderError(GapflowError):
    """Invalid scene, camera, or depth data."""


class PolicyError(GapflowError):
    """Invalid policy inputs or non-finite activations."""


class CheckpointError(GapflowError):
    """Corrupt, truncated, or wrong-format checkpoint file."""


class ArchitectureMismatchError(CheckpointError):
    """Checkpoint architecture does not match the expected one."""


class ConfigError(GapflowError):
    """Invalid run configuration."""


class TrainingError(GapflowError):
    """Unrecoverable failure during training (NaN storm, aborted rollout)."""
