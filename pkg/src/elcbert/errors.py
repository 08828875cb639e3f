"""Exception types shared across the package."""


class ElcError(Exception):
    """Base class for all errors raised by elcbert."""


class ShapeMismatch(ElcError, ValueError):
    def __init__(self, kind, *shapes):
        self.kind = kind
        self.shapes = shapes
        super().__init__(f"{kind}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class LengthMismatch(ElcError, ValueError):
    pass


class EmptyAxis(ElcError, ValueError):
    pass


class EmptyVector(ElcError, ValueError):
    pass


class NotScalar(ElcError, ValueError):
    pass


class DetachedTensor(ElcError, RuntimeError):
    pass


class NonFiniteValue(ElcError, FloatingPointError):
    pass


class NonFiniteGradient(NonFiniteValue):
    pass


class InvalidLayerIndex(ElcError, ValueError):
    pass


class RowNotNormalized(ElcError, ValueError):
    pass


class IndexOutOfVocab(ElcError, IndexError):
    pass


class SequenceTooLong(ElcError, ValueError):
    pass


class MissingHeadWeights(ElcError, KeyError):
    pass


class ConfigError(ElcError, ValueError):
    """Invalid configuration; ``key`` names the offending field when known."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)


class NoMaskableTokens(ElcError, ValueError):
    pass


class NoLabeledPositions(ElcError, ValueError):
    pass


class StepOutOfRange(ElcError, ValueError):
    pass


class EmptyCorpus(ElcError, ValueError):
    pass


class IoFailure(ElcError, OSError):
    def __init__(self, path, reason=""):
        self.path = str(path)
        super().__init__(f"cannot read {path}: {reason}")


class InvalidUtf8(ElcError, ValueError):
    def __init__(self, path, offset):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: invalid UTF-8 at byte {offset}")


class CorruptCheckpoint(ElcError, ValueError):
    pass


class VersionMismatch(ElcError, ValueError):
    pass


class WiringMismatch(ElcError, ValueError):
    pass


class EmptySentence(ElcError, ValueError):
    pass


class InvalidPair(ElcError, ValueError):
    pass


class NoScorablePairs(ElcError, ValueError):
    pass


class NotElcCheckpoint(ElcError, ValueError):
    pass
