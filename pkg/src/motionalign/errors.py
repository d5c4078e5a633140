"""Exception hierarchy shared by every module."""


class AlignError(Exception):
    """Base class for all errors raised by motionalign."""


class ValidationError(AlignError, ValueError):
    """Bad user input: malformed files, invalid configs, out-of-range values."""


class ContractViolation(AlignError, ValueError):
    """A caller broke a function precondition (shape mismatch, non-scalar loss...)."""


class NumericError(AlignError, ArithmeticError):
    """NaN/Inf or a degenerate value appeared during computation."""


class DegeneracyError(NumericError):
    pass


class NotFoundError(AlignError, LookupError):
    pass


class ProviderError(AlignError):
    """The text embedding provider failed (remote error, dimension mismatch)."""


class IntegrityError(AlignError):
    """Checkpoint bytes do not match their checksums."""


class UnsupportedVersionError(AlignError):
    pass


class TrainingError(AlignError, RuntimeError):
    pass
