"""Planted synthetic datasets for desk-scale experiments.

Every class owns a small set of atomic prototype vectors; a configurable
fraction of them is drawn from one pool shared by all classes, which makes
classes ambiguous.  Videos concatenate segments, one per atomic, whose
lengths come from a Dirichlet draw (low concentration = strongly non-uniform
durations), and frames are noisy copies of their segment's prototype.
Class texts mirror the construction: sub-text tokens are noisy copies of
single atomics, global tokens noisy copies of the class prototype (the mean
of its atomics), so a zero-noise, zero-sharing dataset is exactly
recoverable from its texts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .store import (
    ClassTextBundle,
    EmbeddingDataset,
    FrameEmbeddings,
    SubtextCandidateSet,
    TextTokens,
    frozen_array,
)


@dataclass(frozen=True)
class SyntheticConfig:
    classes: int = 10
    atomics: int = 4            # atomic actions per class = sub-texts per class
    rho: float = 0.5            # fraction of atomics shared across all classes
    frames: int = 8
    dim: int = 32
    videos_per_class: int = 50
    noise: float = 0.25
    concentration: float = 0.5  # Dirichlet concentration for segment durations
    subtext_tokens: int = 3
    global_tokens: int = 4
    background_pool: int = 4    # globally shared distractor prototypes
    background_segments: int = 2  # distractor segments per video (0 disables)
    background_scale: float = 2.5  # distractor amplitude relative to atomics
    name_prefix: str = "class"
    seed: int = 0

    def __post_init__(self):
        if min(self.classes, self.atomics, self.frames, self.dim,
               self.videos_per_class, self.subtext_tokens, self.global_tokens) < 1:
            raise ConfigError("all synthetic counts must be >= 1")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.concentration <= 0:
            raise ConfigError(f"concentration must be > 0, got {self.concentration}")
        if self.background_segments < 0 or self.background_pool < 0:
            raise ConfigError("background counts must be >= 0")
        if self.background_segments > 0 and self.background_pool < 1:
            raise ConfigError("background segments need a non-empty background pool")


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.sqrt((v * v).sum())


def _world(cfg: SyntheticConfig) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Per-class (A, D) prototype matrices plus the background pool.

    The first round(rho*A) rows of every class are common to all classes;
    background prototypes never appear in any class's texts.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    n_shared = int(round(cfg.rho * cfg.atomics))
    shared = [_unit(rng, cfg.dim) for _ in range(n_shared)]
    atomics = []
    for _ in range(cfg.classes):
        own = [_unit(rng, cfg.dim) for _ in range(cfg.atomics - n_shared)]
        atomics.append(np.stack(shared + own))
    background = None
    if cfg.background_segments > 0:
        background = cfg.background_scale * np.stack(
            [_unit(rng, cfg.dim) for _ in range(cfg.background_pool)])
    return atomics, background


def integer_durations(weights: np.ndarray, total: int) -> np.ndarray:
    """Round fractional segment lengths to integers summing exactly to total
    (largest-remainder correction)."""
    raw = np.asarray(weights, dtype=np.float64) * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def _text(rng: np.random.Generator, center: np.ndarray, rows: int,
          noise: float) -> TextTokens:
    dim = center.shape[0]
    tokens = center[None, :] + noise * rng.standard_normal((rows, dim))
    summary = center + noise * rng.standard_normal(dim)
    return TextTokens(tokens=frozen_array(tokens), summary=frozen_array(summary))


def generate_synthetic(cfg: SyntheticConfig) -> EmbeddingDataset:
    """Deterministic planted dataset embodying ambiguity (shared atomics),
    non-uniform atomic durations and class-irrelevant background segments."""
    atomics, background = _world(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    classes = []
    for c in range(cfg.classes):
        prototype = atomics[c].mean(axis=0)
        global_text = _text(rng, prototype, cfg.global_tokens, cfg.noise)
        subtexts = tuple(
            _text(rng, atomics[c][a], cfg.subtext_tokens, cfg.noise)
            for a in range(cfg.atomics)
        )
        classes.append(ClassTextBundle(f"{cfg.name_prefix}_{c:03d}", global_text, subtexts))
    videos = []
    for c in range(cfg.classes):
        for v in range(cfg.videos_per_class):
            segments = [atomics[c][a] for a in range(cfg.atomics)]
            if background is not None:
                picks = rng.integers(cfg.background_pool, size=cfg.background_segments)
                segments.extend(background[b] for b in picks)
            order = rng.permutation(len(segments))
            weights = rng.dirichlet(np.full(len(segments), cfg.concentration))
            durations = integer_durations(weights, cfg.frames)
            rows = []
            for s, dur in zip(order, durations):
                for _ in range(int(dur)):
                    rows.append(segments[s] + cfg.noise * rng.standard_normal(cfg.dim))
            videos.append(FrameEmbeddings(
                video_id=f"c{c:03d}_v{v:03d}",
                frames=frozen_array(np.stack(rows)),
                labels=(c,),
            ))
    return EmbeddingDataset(dim=cfg.dim, videos=tuple(videos), classes=tuple(classes))


def generate_candidate_groups(cfg: SyntheticConfig, n_groups: int) -> list[SubtextCandidateSet]:
    """Candidate sub-text sets of decreasing quality for the same planted world.

    Group 0 matches the dataset's own sub-text construction; later groups blend
    each sub-text toward the class prototype (losing atomic specificity) and
    add extra noise, so installing them degrades recognition.
    """
    if n_groups < 1:
        raise ConfigError("need at least one candidate group")
    atomics, _ = _world(cfg)
    out = []
    for c in range(cfg.classes):
        prototype = atomics[c].mean(axis=0)
        groups = []
        for gi in range(n_groups):
            rng = np.random.default_rng([cfg.seed, 2, c, gi])
            blend = gi / max(1, n_groups - 1)
            noise = cfg.noise * (1.0 + gi)
            group = tuple(
                _text(rng, (1.0 - blend) * atomics[c][a] + blend * prototype,
                      cfg.subtext_tokens, noise)
                for a in range(cfg.atomics)
            )
            groups.append(group)
        out.append(SubtextCandidateSet(class_index=c, groups=tuple(groups)))
    return out
