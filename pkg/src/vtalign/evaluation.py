"""Metrics, evaluation protocols, ablations and the sub-text quality study.

Ranking conventions (documented because planted data can produce exact
ties): top-k membership and per-class rankings order by descending score
with ties broken by the lower index, via a stable lexicographic sort.
Average precision for a class ranks all videos by that class's score and
averages precision at each positive's rank over the number of positives;
classes without positives are skipped by the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadKError,
    ClassOverlapError,
    ConfigError,
    EmptyLabelSetError,
    InsufficientVideosError,
    NeedThreeGroupsError,
)
from .pipeline import ModelParams, classify_dataset, init_params
from .store import EmbeddingDataset, SubtextCandidateSet
from .subtext import TppConfig, tpp_dataset_average
from .training import TrainConfig, TrainResult, train

ABLATION_VARIANTS = (
    ("baseline", "mean-pool baseline"),
    ("coarse", "coarse-only"),
    ("fine", "fine-only"),
    ("full", "coarse+fine"),
)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def _ranked_classes(scores_row: np.ndarray) -> np.ndarray:
    """Class indices by descending score, ties broken by lower index."""
    n = scores_row.shape[0]
    return np.lexsort((np.arange(n), -scores_row))


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of videos whose true class is among the k best-scored."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = scores.shape[1]
    if not (1 <= k <= n_classes):
        raise BadKError(f"k must lie in [1, {n_classes}], got {k}")
    hits = 0
    for v in range(scores.shape[0]):
        if labels[v] in _ranked_classes(scores[v])[:k]:
            hits += 1
    return hits / scores.shape[0]


def multilabel_topk_accuracy(scores: np.ndarray, labelsets, k: int) -> float:
    """Top-k hit rate where a hit is any true label in the top-k set."""
    scores = np.asarray(scores, dtype=np.float64)
    n_classes = scores.shape[1]
    if not (1 <= k <= n_classes):
        raise BadKError(f"k must lie in [1, {n_classes}], got {k}")
    hits = 0
    for v, labels in enumerate(labelsets):
        if not labels:
            raise EmptyLabelSetError(f"video {v} has an empty label set")
        if set(labels) & set(_ranked_classes(scores[v])[:k].tolist()):
            hits += 1
    return hits / scores.shape[0]


def mean_average_precision(scores: np.ndarray, labelsets) -> float:
    """Per-class average precision over the ranked video list, averaged over
    classes that have at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    n_videos, n_classes = scores.shape
    for v, labels in enumerate(labelsets):
        if not labels:
            raise EmptyLabelSetError(f"video {v} has an empty label set")
    aps = []
    for c in range(n_classes):
        positive = np.array([c in set(ls) for ls in labelsets])
        n_pos = int(positive.sum())
        if n_pos == 0:
            continue
        order = np.lexsort((np.arange(n_videos), -scores[:, c]))
        hits = 0
        ap = 0.0
        for rank, v in enumerate(order, start=1):
            if positive[v]:
                hits += 1
                ap += hits / rank
        aps.append(ap / n_pos)
    return float(np.mean(aps))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    top1: float
    top5: float
    map: float | None
    per_class: dict[str, float]
    n_videos: int

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "top5": self.top5,
            "map": self.map,
            "per_class": self.per_class,
            "n_videos": self.n_videos,
        }


def evaluate(ds: EmbeddingDataset, params: ModelParams, variant: str = "full",
             literal_eq8: bool = False, threads: int = 1) -> EvalReport:
    """Classify every video and summarize accuracy.

    Single-label datasets report top-1/top-5 (top-5 capped at the class
    count) and per-class top-1; multi-label datasets report hit-if-any top-k
    plus mean average precision with per-class AP.
    """
    videos = list(ds.videos)
    scores = classify_dataset(videos, ds.classes, params, variant, literal_eq8,
                              threads=threads)
    labelsets = [v.labels for v in videos]
    k5 = min(5, len(ds.classes))
    multi = any(len(ls) > 1 for ls in labelsets)
    map_value = mean_average_precision(scores, labelsets)
    per_class: dict[str, float] = {}
    if multi:
        top1 = multilabel_topk_accuracy(scores, labelsets, 1)
        top5 = multilabel_topk_accuracy(scores, labelsets, k5)
        for c, name in enumerate(ds.class_names):
            pos = np.array([c in set(ls) for ls in labelsets])
            if pos.any():
                order = np.lexsort((np.arange(len(videos)), -scores[:, c]))
                hits, ap = 0, 0.0
                for rank, v in enumerate(order, start=1):
                    if pos[v]:
                        hits += 1
                        ap += hits / rank
                per_class[name] = ap / hits
    else:
        labels = np.array([ls[0] for ls in labelsets])
        top1 = topk_accuracy(scores, labels, 1)
        top5 = topk_accuracy(scores, labels, k5)
        preds = scores.argmax(axis=1)
        for c, name in enumerate(ds.class_names):
            mask = labels == c
            if mask.any():
                per_class[name] = float(np.mean(preds[mask] == c))
    return EvalReport(top1=top1, top5=top5, map=map_value, per_class=per_class,
                      n_videos=len(videos))


# --------------------------------------------------------------------------
# dataset splitting
# --------------------------------------------------------------------------

def _by_class(ds: EmbeddingDataset) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {c: [] for c in range(len(ds.classes))}
    for i, v in enumerate(ds.videos):
        groups[v.label].append(i)
    return groups


def _take(ds: EmbeddingDataset, indices) -> EmbeddingDataset:
    chosen = sorted(indices)
    return EmbeddingDataset(ds.dim, tuple(ds.videos[i] for i in chosen), ds.classes)


def split_videos(ds: EmbeddingDataset, eval_fraction: float,
                 seed: int) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Stratified train/eval split of videos; classes are shared."""
    if not (0.0 < eval_fraction < 1.0):
        raise ConfigError(f"eval_fraction must lie in (0, 1), got {eval_fraction}")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    eval_idx: list[int] = []
    for c, members in sorted(_by_class(ds).items()):
        members = list(members)
        order = rng.permutation(len(members))
        n_eval = int(round(eval_fraction * len(members)))
        eval_idx.extend(members[i] for i in order[:n_eval])
        train_idx.extend(members[i] for i in order[n_eval:])
    return _take(ds, train_idx), _take(ds, eval_idx)


def few_shot_split(ds: EmbeddingDataset, shots: int,
                   seed: int) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Exactly `shots` training videos per class; the rest are held out."""
    if shots < 1:
        raise ConfigError(f"shots must be >= 1, got {shots}")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    eval_idx: list[int] = []
    for c, members in sorted(_by_class(ds).items()):
        if len(members) <= shots:
            raise InsufficientVideosError(
                f"class {c} has {len(members)} videos, needs more than {shots}")
        chosen = rng.choice(len(members), size=shots, replace=False)
        chosen_set = set(chosen.tolist())
        for i, idx in enumerate(members):
            (train_idx if i in chosen_set else eval_idx).append(idx)
    return _take(ds, train_idx), _take(ds, eval_idx)


def subset_classes(ds: EmbeddingDataset, class_indices) -> EmbeddingDataset:
    """Restrict to the given classes, remapping labels to the new order."""
    class_indices = list(class_indices)
    remap = {old: new for new, old in enumerate(class_indices)}
    classes = tuple(ds.classes[i] for i in class_indices)
    videos = []
    for v in ds.videos:
        kept = tuple(sorted(remap[l] for l in v.labels if l in remap))
        if kept:
            videos.append(replace(v, labels=kept))
    return EmbeddingDataset(ds.dim, tuple(videos), classes)


# --------------------------------------------------------------------------
# protocols
# --------------------------------------------------------------------------

def zero_shot_eval(params: ModelParams, trained_on, eval_ds: EmbeddingDataset,
                   variant: str = "full", literal_eq8: bool = False,
                   threads: int = 1) -> EvalReport:
    """Evaluate frozen parameters on classes disjoint from the training set."""
    overlap = set(trained_on) & set(eval_ds.class_names)
    if overlap:
        raise ClassOverlapError(
            f"evaluation classes overlap the training classes: {sorted(overlap)}")
    return evaluate(eval_ds, params, variant, literal_eq8, threads)


@dataclass(frozen=True)
class AblationRow:
    variant: str
    label: str
    top1: float
    top5: float


@dataclass(frozen=True)
class AblationTable:
    rows: tuple[AblationRow, ...]

    def row(self, variant: str) -> AblationRow:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)

    def to_csv(self) -> str:
        lines = ["variant,top1,top5"]
        for r in self.rows:
            lines.append(f"{r.label},{r.top1:.17g},{r.top5:.17g}")
        return "\n".join(lines) + "\n"


def ablation_suite(ds: EmbeddingDataset, cfg: TrainConfig, seeds,
                   eval_fraction: float = 0.4) -> AblationTable:
    """Train aggregation variants under identical budgets and seeds and report
    seed-averaged held-out accuracy.  The mean-pool baseline has no learnable
    aggregation and is evaluated untrained."""
    seeds = list(seeds)
    sums = {variant: np.zeros(2) for variant, _ in ABLATION_VARIANTS}
    for seed in seeds:
        train_ds, eval_ds = split_videos(ds, eval_fraction, seed)
        for variant, _ in ABLATION_VARIANTS:
            if variant == "baseline":
                params = init_params(ds.dim, seed=seed, tau=cfg.tau, lam=cfg.lam)
            else:
                params = train(train_ds, replace(cfg, variant=variant), seed=seed).params
            report = evaluate(eval_ds, params, variant, cfg.literal_eq8)
            sums[variant] += (report.top1, report.top5)
    rows = tuple(
        AblationRow(variant, label, *(sums[variant] / len(seeds)))
        for variant, label in ABLATION_VARIANTS
    )
    return AblationTable(rows)


# --------------------------------------------------------------------------
# sub-text quality vs accuracy study
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TppStudyResult:
    pairs: tuple[tuple[float, float], ...]   # (dataset-average TPP, eval top-1)
    pearson_r: float | None
    degenerate: bool

    def to_csv(self) -> str:
        lines = ["group,tpp,top1"]
        for g, (tpp, top1) in enumerate(self.pairs):
            lines.append(f"{g},{tpp:.17g},{top1:.17g}")
        return "\n".join(lines) + "\n"


def pearson_r(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation; None when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if denom == 0.0:
        return None
    return float((dx * dy).sum() / denom)


def tpp_correlation_study(ds: EmbeddingDataset, candidates: list[SubtextCandidateSet],
                          cfg: TrainConfig, tpp_cfg: TppConfig = TppConfig(),
                          eval_fraction: float = 0.4) -> TppStudyResult:
    """Install each candidate group, train under a fixed budget and seed, and
    pair the group's dataset-average score with its held-out top-1."""
    by_class = {c.class_index: c for c in candidates}
    missing = [i for i in range(len(ds.classes)) if i not in by_class]
    if missing:
        raise ConfigError(f"no candidate groups for classes {missing}")
    group_counts = {len(by_class[i].groups) for i in range(len(ds.classes))}
    if len(group_counts) != 1:
        raise ConfigError(f"classes disagree on group count: {sorted(group_counts)}")
    n_groups = group_counts.pop()
    if n_groups < 3:
        raise NeedThreeGroupsError(
            f"the study needs at least 3 candidate groups, got {n_groups}")
    pairs = []
    for g in range(n_groups):
        installed = ds.with_subtexts(
            [list(by_class[i].groups[g]) for i in range(len(ds.classes))])
        tpp = tpp_dataset_average(installed, tpp_cfg)
        train_ds, eval_ds = split_videos(installed, eval_fraction, cfg.seed)
        result: TrainResult = train(train_ds, cfg)
        report = evaluate(eval_ds, result.params, cfg.variant, cfg.literal_eq8)
        pairs.append((tpp, report.top1))
    r = pearson_r(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    return TppStudyResult(pairs=tuple(pairs), pearson_r=r, degenerate=r is None)
