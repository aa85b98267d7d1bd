"""Exception hierarchy shared across the toolkit."""


class MolGnnError(Exception):
    """Base class for every error raised by molgnn."""


# chemistry
class SmilesError(MolGnnError):
    pass


class EmptyInput(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownAtomToken(SmilesError):
    pass


class ValenceViolation(SmilesError):
    pass


class KekulizationFailure(SmilesError):
    pass


# featurization / batching
class UnknownFeatureName(MolGnnError):
    pass


class EmptyBatch(MolGnnError):
    pass


class BatchParseError(MolGnnError):
    """Raised by strict batch encoding; ``failures`` holds (index, smiles, error)."""

    def __init__(self, failures):
        self.failures = list(failures)
        first = self.failures[0]
        super().__init__(
            f"{len(self.failures)} SMILES failed to parse; first at index "
            f"{first[0]} ({first[1]!r}): {first[2]}"
        )


# graph tensor
class FieldMismatch(MolGnnError):
    pass


class ShapeMismatch(MolGnnError):
    pass


class RequiredFieldRemoval(MolGnnError):
    pass


# autodiff
class NonFiniteValue(MolGnnError):
    pass


class DisconnectedOutput(MolGnnError):
    pass


# layers / models
class WidthMismatch(MolGnnError):
    pass


class MissingEdgeFeature(MolGnnError):
    pass


class LayoutMismatch(MolGnnError):
    pass


class ModelConfigError(MolGnnError):
    pass


# training
class EmptyMask(MolGnnError):
    pass


class NonFiniteLoss(MolGnnError):
    pass


class SingleClassTask(MolGnnError):
    pass


# dataset io
class MissingColumn(MolGnnError):
    pass


class NoValidRows(MolGnnError):
    pass


class DigestMismatch(MolGnnError):
    pass


class TruncatedRecord(MolGnnError):
    def __init__(self, offset, message="record truncated"):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class CorruptRecordFile(MolGnnError):
    pass


class BadFractions(MolGnnError):
    pass


# interpretability
class MultiOutputUnsupported(MolGnnError):
    pass


class BadLayerIndex(MolGnnError):
    pass


# rt filter
class TooFewResiduals(MolGnnError):
    pass


# cli
class ConfigError(MolGnnError):
    """Config validation failure (CLI exit code 2)."""
