"""NTM dialogue exceptions."""


class NtmDialogException(Exception):
    """Base NTM dialogue exception."""


class DimensionError(NtmDialogException, ValueError):
    """Tensor shapes do not fit the operation."""


class ContractError(NtmDialogException, ValueError):
    """A precondition of the operation does not hold."""


class TokenIndexError(NtmDialogException, IndexError):
    """Token or target id outside the vocabulary."""


class ConfigurationError(NtmDialogException):
    """Invalid configuration or mismatched corpus, vocabulary or checkpoint."""


class SkippedExample(NtmDialogException):
    """Conversation cannot be encoded for this architecture and is skipped."""


class CheckpointError(NtmDialogException):
    """Checkpoint could not be read."""


class UnsupportedCheckpointVersion(CheckpointError):
    """Checkpoint format version is not supported."""


class CorruptCheckpoint(CheckpointError):
    """Checkpoint is truncated or fails its digest."""


class GradientCheckError(NtmDialogException):
    """Analytic gradients disagree with finite differences."""
