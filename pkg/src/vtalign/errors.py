"""Exception hierarchy shared by all vtalign modules.

Every error raised on purpose derives from VtalignError so the CLI can map
failures onto a single machine-parsable line and exit code 1.
"""


class VtalignError(Exception):
    """Base class for all vtalign errors."""

    module = "vtalign"


# --- embedding store -------------------------------------------------------

class StoreError(VtalignError):
    module = "store"


class MissingFileError(StoreError):
    pass


class ManifestParseError(StoreError):
    pass


class ShapeMismatchError(StoreError):
    pass


class NonFiniteError(StoreError):
    pass


class ValidationError(StoreError):
    pass


class IoFailureError(StoreError):
    pass


class ZeroVectorError(VtalignError):
    module = "store"


# --- sub-text metrics ------------------------------------------------------

class SubtextError(VtalignError):
    module = "subtext"


class NeedTwoSubtextsError(SubtextError):
    pass


class EmptyCandidatesError(SubtextError):
    pass


# --- alignment pipeline ----------------------------------------------------

class PipelineError(VtalignError):
    module = "pipeline"


class DimMismatchError(PipelineError):
    pass


class EmptySubtextsError(PipelineError):
    pass


class EmptyClassListError(PipelineError):
    pass


# --- training --------------------------------------------------------------

class TrainingError(VtalignError):
    module = "training"


class NonFiniteGradientError(TrainingError):
    pass


class EmptySampleError(TrainingError):
    pass


# --- evaluation harness ----------------------------------------------------

class EvalError(VtalignError):
    module = "evaluation"


class BadKError(EvalError):
    pass


class EmptyLabelSetError(EvalError):
    pass


class ClassOverlapError(EvalError):
    pass


class InsufficientVideosError(EvalError):
    pass


class NeedThreeGroupsError(EvalError):
    pass


class ConfigError(VtalignError):
    module = "config"
