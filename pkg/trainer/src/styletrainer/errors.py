class TrainerError(Exception):
    """Base class for trainer failures."""


class JobError(TrainerError):
    """Job spec missing, unreadable, or incomplete."""


class DigestMismatch(TrainerError):
    """Pairs file content does not match the digest pinned in the job spec."""


class DivergedLoss(TrainerError):
    """Training loss went NaN/inf."""


class ContextOverflow(TrainerError):
    """A pair does not fit the model context window."""


class OutOfMemory(TrainerError):
    """Training ran out of memory; reports the batch size to retry with."""

    def __init__(self, message: str, suggested_batch_size: int):
        super().__init__(message)
        self.suggested_batch_size = suggested_batch_size
