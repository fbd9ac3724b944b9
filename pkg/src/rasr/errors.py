"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class RasrError(Exception):
    """Base class for all toolkit errors."""


class ParseError(RasrError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MixedTalkError(RasrError):
    pass


class EmptyInputError(RasrError):
    pass


class DuplicateUtteranceError(RasrError):
    pass


class DimensionMismatch(RasrError):
    pass


class ZeroNormError(RasrError):
    pass


class RemoteUnavailable(RasrError):
    """Transient failure talking to a remote service; safe to retry."""


class CorruptStoreError(RasrError):
    pass


class MissingTranscriptError(RasrError):
    pass


class BudgetTooSmall(RasrError):
    pass


class EmptyReferenceError(RasrError):
    pass


class NonFiniteLoss(RasrError):
    def __init__(self, message: str, stage: int | None = None, epoch: int | None = None):
        self.stage = stage
        self.epoch = epoch
        if stage is not None:
            message = f"stage {stage}, epoch {epoch}: {message}"
        super().__init__(message)


class BackendError(RasrError):
    """An ASR or decoder backend failed for one utterance."""

    def __init__(self, message: str, utterance_id: str | None = None):
        self.utterance_id = utterance_id
        if utterance_id is not None:
            message = f"[{utterance_id}] {message}"
        super().__init__(message)


class RemoteProtocolError(RasrError):
    """A remote service answered, but not in the agreed wire format."""
