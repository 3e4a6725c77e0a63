"""Exception hierarchy.

Everything raised on bad data or a violated contract derives from
:class:`CfxError`; the CLI maps those to exit code 2.
"""


class CfxError(Exception):
    """Base class for data and contract errors."""


class CorpusFormatError(CfxError):
    """A corpus file could not be parsed or violates a corpus invariant."""

    def __init__(self, message: str, line: int | None = None, record_id: str | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.record_id = record_id


class FlipError(CfxError):
    """Base for attribute-flipping failures."""


class NoAlternative(FlipError):
    pass


class HeadUnknown(FlipError):
    pass


class Unmodified(FlipError):
    pass


class EmptyPairs(CfxError):
    pass


class NonFiniteLoss(CfxError):
    def __init__(self, epoch: int, learning_rate: float):
        super().__init__(
            f"loss became non-finite at epoch {epoch}; "
            f"try a learning rate below {learning_rate:g}"
        )
        self.epoch = epoch


class EmptyPool(CfxError):
    pass


class ContractError(CfxError):
    """Caller passed an inconsistent combination of arguments."""


class ModelFormatError(CfxError):
    pass
