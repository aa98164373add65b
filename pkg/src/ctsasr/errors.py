"""Exception types shared across the toolkit."""


class CtsAsrError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CtsAsrError, ValueError):
    """Tensor or mask shapes are incompatible with the requested operation."""


class LabelError(CtsAsrError, ValueError):
    """A label id is outside the valid vocabulary range."""


class NumericError(CtsAsrError, ArithmeticError):
    """A non-finite value (NaN/Inf) reached a place that requires finite numbers."""


class InfeasibleTargetError(CtsAsrError, ValueError):
    """The CTC target cannot be aligned: too few frames for the extended label lattice."""


class InputTooShortError(CtsAsrError, ValueError):
    """The input sequence is shorter than the frontend subsampling requires."""


class TrainingError(CtsAsrError, RuntimeError):
    """Training diverged or could not proceed."""


class DecodeError(CtsAsrError, RuntimeError):
    """Decoding received unusable inputs (e.g. an empty encoder output)."""


class EmptyReferenceError(CtsAsrError, ValueError):
    """WER scoring requires a non-empty reference."""


class EmptyInputError(CtsAsrError, ValueError):
    """An operation that needs at least one element received none."""
