"""Multi-granularity video-text alignment over precomputed embeddings."""

from .store import (
    ClassTextBundle,
    EmbeddingDataset,
    FrameEmbeddings,
    SubtextCandidateSet,
    TextTokens,
    l2_normalize,
    load_dataset,
    save_dataset,
    validate,
)
from .subtext import TppConfig, select_subtext_set, tpp_dataset_average, tpp_score
from .pipeline import (
    AttentionParams,
    FusionParams,
    ImportanceProfile,
    ModelParams,
    classify,
    init_params,
    video_embedding,
)
from .training import Batch, TrainConfig, backward, grad_check, train
from .synthetic import SyntheticConfig, generate_synthetic
from .evaluation import (
    EvalReport,
    ablation_suite,
    evaluate,
    few_shot_split,
    mean_average_precision,
    topk_accuracy,
    tpp_correlation_study,
    zero_shot_eval,
)

__version__ = "0.1.0"
