"""Text-prompt-perplexity scoring and sub-text set selection.

A sub-text set is scored by combining, per sub-text, its similarity to the
global class text (sigma) and its divergence from the other sub-texts
(delta).  Both are cosine-based and mapped to [0, 1]; the set score is

    TPP = exp(-(1/N) * sum_n log(alpha(sigma_n) * beta(delta_n)))

with sigma/delta clamped to [epsilon, 1] before the scaling functions are
applied.  The scalers are configurable because larger TPP under the identity
scalers corresponds to *smaller* sigma*delta products; experiments decide the
useful direction empirically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, EmptyCandidatesError, NeedTwoSubtextsError, ZeroVectorError
from .store import ClassTextBundle, EmbeddingDataset, SubtextCandidateSet, TextTokens


def _sorted_sum(values: np.ndarray) -> float:
    # Summing in sorted order makes the result independent of input order.
    return float(np.sort(np.asarray(values, dtype=np.float64), axis=None).sum())


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


def sigma_score(t_summary: np.ndarray, s_summary: np.ndarray) -> float:
    """Similarity of a sub-text to the global text, mapped to [0, 1]."""
    return (cosine_sim(t_summary, s_summary) + 1.0) / 2.0


def delta_score(s_summaries: list[np.ndarray], n: int) -> float:
    """Divergence of sub-text ``n`` from the rest of its set, in [0, 1]."""
    count = len(s_summaries)
    if count < 2:
        raise NeedTwoSubtextsError(f"divergence needs at least 2 sub-texts, got {count}")
    sims = np.array([
        (cosine_sim(s_summaries[n], s_summaries[k]) + 1.0) / 2.0
        for k in range(count) if k != n
    ])
    return 1.0 - _sorted_sum(sims) / (count - 1)


# --------------------------------------------------------------------------
# scaling functions
# --------------------------------------------------------------------------

def _parse_scaler(spec: str) -> Callable[[float], float]:
    """Parse a scaler spec: 'identity' | 'power:<p>' | 'one-minus'."""
    if spec == "identity":
        return lambda x: x
    if spec == "one-minus":
        return lambda x: 1.0 - x
    if spec.startswith("power:"):
        try:
            p = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad power scaler spec {spec!r}") from exc
        if p <= 0:
            raise ConfigError(f"power exponent must be > 0, got {p}")
        return lambda x: x ** p
    raise ConfigError(f"unknown scaler spec {spec!r} "
                      "(expected identity, power:<p> or one-minus)")


@dataclass(frozen=True)
class TppConfig:
    """Scalers for sigma/delta plus the clamp floor applied before scaling."""

    alpha: str = "identity"
    beta: str = "identity"
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.epsilon < 0.5):
            raise ConfigError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        _parse_scaler(self.alpha)
        _parse_scaler(self.beta)

    @property
    def alpha_fn(self) -> Callable[[float], float]:
        return _parse_scaler(self.alpha)

    @property
    def beta_fn(self) -> Callable[[float], float]:
        return _parse_scaler(self.beta)


@dataclass(frozen=True)
class TppBreakdown:
    """Per-sub-text sigma/delta (unclamped) and the final set score."""

    sigma: np.ndarray   # (N,)
    delta: np.ndarray   # (N,)
    tpp: float


def tpp_score(bundle: ClassTextBundle, cfg: TppConfig = TppConfig()) -> TppBreakdown:
    """Score one class's sub-text set against its global text."""
    n_sub = bundle.num_subtexts
    if n_sub < 2:
        raise NeedTwoSubtextsError(
            f"class {bundle.class_name!r}: scoring needs >= 2 sub-texts, got {n_sub}"
        )
    summaries = [s.summary for s in bundle.subtexts]
    sigma = np.array([sigma_score(bundle.global_text.summary, s) for s in summaries])
    delta = np.array([delta_score(summaries, n) for n in range(n_sub)])
    alpha, beta = cfg.alpha_fn, cfg.beta_fn
    logs = np.array([
        math.log(alpha(min(1.0, max(cfg.epsilon, float(sigma[n]))))
                 * beta(min(1.0, max(cfg.epsilon, float(delta[n])))))
        for n in range(n_sub)
    ])
    tpp = math.exp(-_sorted_sum(logs) / n_sub)
    return TppBreakdown(sigma=sigma, delta=delta, tpp=tpp)


@dataclass(frozen=True)
class SubtextSelection:
    """Result of picking the best candidate group for one class."""

    chosen: int
    breakdowns: tuple[TppBreakdown, ...] = field(repr=False)

    @property
    def scores(self) -> np.ndarray:
        return np.array([b.tpp for b in self.breakdowns])


def select_subtext_set(candidates: SubtextCandidateSet, global_text: TextTokens,
                       cfg: TppConfig = TppConfig()) -> SubtextSelection:
    """Pick the candidate group with the highest score; ties go to the lowest index."""
    if not candidates.groups:
        raise EmptyCandidatesError(
            f"class {candidates.class_index}: no candidate groups"
        )
    breakdowns = []
    for group in candidates.groups:
        bundle = ClassTextBundle("candidate", global_text, tuple(group))
        breakdowns.append(tpp_score(bundle, cfg))
    scores = [b.tpp for b in breakdowns]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return SubtextSelection(chosen=best, breakdowns=tuple(breakdowns))


def tpp_dataset_average(ds: EmbeddingDataset, cfg: TppConfig = TppConfig()) -> float:
    """Arithmetic mean of the per-class scores over the whole dataset."""
    scores = []
    for ci, bundle in enumerate(ds.classes):
        try:
            scores.append(tpp_score(bundle, cfg).tpp)
        except (NeedTwoSubtextsError, ZeroVectorError) as exc:
            raise type(exc)(f"class {ci} ({bundle.class_name!r}): {exc}") from exc
    return _sorted_sum(np.array(scores)) / len(scores)
