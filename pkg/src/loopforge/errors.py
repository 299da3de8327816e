"""Exception hierarchy shared across the toolkit."""


class LoopforgeError(Exception):
    """Base class for all loopforge errors."""


# --- geometry ---

class AngleNearPi(LoopforgeError):
    """Rotation angle too close to pi; the logarithm is ill-conditioned."""


# --- descriptors ---

class DimensionMismatch(LoopforgeError):
    """Operands disagree on descriptor dimension or vector length."""


class InsufficientData(LoopforgeError):
    """Not enough training descriptors for the requested vocabulary size."""


# --- descriptor database ---

class NonMonotonicFrameId(LoopforgeError):
    """Inserted frame id is not greater than all existing ids."""


# --- adaptive threshold ---

class NonFiniteScore(LoopforgeError):
    """Similarity score is NaN or infinite."""


# --- geometric verification ---

class TooFewPoints(LoopforgeError):
    """Fewer point pairs than the estimator's minimum."""


class DegenerateConfiguration(LoopforgeError):
    """Point set is rank-deficient (collinear or coincident)."""


class AllSamplesDegenerate(LoopforgeError):
    """Every RANSAC minimal sample was degenerate."""


# --- pose graph ---

class DisconnectedGraph(LoopforgeError):
    """Graph is not connected from the gauge node."""


class SingularNormalEquations(LoopforgeError):
    """Normal equations remained singular after damping escalation."""


class MissingKeyframe(LoopforgeError):
    """A trajectory frame has no covering keyframe in the optimized poses."""


# --- pipeline ---

class ProviderDesync(LoopforgeError):
    """An input provider returned data for the wrong frame id."""


class ConfigMismatch(LoopforgeError):
    """Replay config hash does not match the hash recorded in the event log."""


class ReplayMismatch(LoopforgeError):
    """Replayed execution diverged from the recorded event log."""


# --- harness ---

class InvalidConfig(LoopforgeError):
    """Synthetic world configuration violates its invariants."""


class InvalidFrames(LoopforgeError):
    """Requested frame ids do not exist in the dataset."""


class LengthMismatch(LoopforgeError):
    """Trajectories differ in length or frame ids."""


# --- file formats ---

class BadMagic(LoopforgeError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(LoopforgeError):
    """File format version is not supported by this reader."""


class TruncatedPayload(LoopforgeError):
    """File payload is shorter than the header declares."""


class DimMismatch(LoopforgeError):
    """Frame block dimensions disagree with the file header."""


class ParseError(LoopforgeError):
    """Text format parse failure; message carries the line number."""


class ConfigSchemaError(LoopforgeError):
    """Config document has unknown keys or ill-typed values."""
