"""Multi-granularity video embedding pipeline and classification rule.

Global class text is augmented with sub-texts via single-head cross
attention; frames are then aggregated twice: a coarse branch weighted by
per-token softmax similarity to the augmented global tokens, and a fine
branch weighted by the best-matching sub-text.  Two feedforward heads fuse
the branches into one class-conditional video embedding whose cosine
similarity against the class summary vector is the classification score.

All reductions over the frame axis sum in value-sorted order, so permuting
a video's frames permutes the importance weights and leaves embeddings and
scores bit-exactly unchanged.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimMismatchError,
    EmptyClassListError,
    EmptySubtextsError,
    ZeroVectorError,
)
from .store import ClassTextBundle, FrameEmbeddings, TextTokens

VARIANTS = ("baseline", "coarse", "fine", "full")
ACTIVATIONS = ("tanh", "relu")


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass
class AttentionParams:
    """Square projection matrices for query, key and value."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray


@dataclass
class FfnParams:
    """Affine map D->D, optionally with a hidden layer D->H->D."""

    weight: np.ndarray             # (D, D), or (H, D) when hidden
    bias: np.ndarray               # (D,), or (H,) when hidden
    weight2: np.ndarray | None = None   # (D, H)
    bias2: np.ndarray | None = None     # (D,)
    activation: str = "tanh"

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.weight.T + self.bias
        if self.weight2 is None:
            return y
        if self.activation == "tanh":
            y = np.tanh(y)
        elif self.activation == "relu":
            y = np.maximum(y, 0.0)
        else:
            raise ConfigError(f"unknown activation {self.activation!r}")
        return y @ self.weight2.T + self.bias2


@dataclass
class FusionParams:
    coarse: FfnParams
    fine: FfnParams


@dataclass
class ModelParams:
    """All learnable tensors plus the loss hyperparameters."""

    attention: AttentionParams
    fusion: FusionParams
    tau: float = 0.05
    lam: float = 1.0

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views of every learnable tensor, in a stable order."""
        out = {
            "attention.wq": self.attention.wq,
            "attention.wk": self.attention.wk,
            "attention.wv": self.attention.wv,
        }
        for branch_name, ffn in (("coarse", self.fusion.coarse),
                                 ("fine", self.fusion.fine)):
            out[f"fusion.{branch_name}.weight"] = ffn.weight
            out[f"fusion.{branch_name}.bias"] = ffn.bias
            if ffn.weight2 is not None:
                out[f"fusion.{branch_name}.weight2"] = ffn.weight2
                out[f"fusion.{branch_name}.bias2"] = ffn.bias2
        return out

    def copy(self) -> "ModelParams":
        def cp(f: FfnParams) -> FfnParams:
            return FfnParams(
                f.weight.copy(), f.bias.copy(),
                None if f.weight2 is None else f.weight2.copy(),
                None if f.bias2 is None else f.bias2.copy(),
                f.activation,
            )
        att = AttentionParams(self.attention.wq.copy(), self.attention.wk.copy(),
                              self.attention.wv.copy())
        return ModelParams(att, FusionParams(cp(self.fusion.coarse), cp(self.fusion.fine)),
                           self.tau, self.lam)


def init_params(dim: int, seed: int = 0, hidden: int | None = None,
                activation: str = "tanh", tau: float = 0.05,
                lam: float = 1.0) -> ModelParams:
    """Default initialization: uniform(+-1/sqrt(D)) attention projections and
    near-identity feedforward heads, so the untrained model approximates the
    plain sum of the two branch embeddings."""
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(dim)

    def proj() -> np.ndarray:
        return rng.uniform(-bound, bound, size=(dim, dim))

    def ffn() -> FfnParams:
        if hidden is None:
            w = np.eye(dim) + 0.01 * rng.standard_normal((dim, dim))
            return FfnParams(w, np.zeros(dim), activation=activation)
        w1 = rng.uniform(-bound, bound, size=(hidden, dim))
        w2 = rng.uniform(-1.0 / math.sqrt(hidden), 1.0 / math.sqrt(hidden),
                         size=(dim, hidden))
        return FfnParams(w1, np.zeros(hidden), w2, np.zeros(dim), activation)

    att = AttentionParams(proj(), proj(), proj())
    return ModelParams(att, FusionParams(ffn(), ffn()), tau=tau, lam=lam)


@dataclass(frozen=True)
class ImportanceProfile:
    """Per-frame weights from the two branches, for one (video, class) pair."""

    coarse: np.ndarray   # (L,), sums to the augmented token count
    fine: np.ndarray     # (L,), sums to 1


# --------------------------------------------------------------------------
# order-canonical reductions and normalization
# --------------------------------------------------------------------------

def _frame_sum(terms: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    # Sorting before reduction makes the sum independent of frame order.
    out = np.sort(terms, axis=axis).sum(axis=axis)
    if keepdims:
        out = np.expand_dims(out, axis)
    return out


def _softmax_frames(logits: np.ndarray) -> np.ndarray:
    """Softmax along the last (frame) axis, stable, order-canonical."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / _frame_sum(e, axis=-1, keepdims=True)


def _normalize_rows(m: np.ndarray, what: str) -> np.ndarray:
    """Normalize along the last axis; rejects zero-norm rows."""
    norms = np.sqrt((m * m).sum(axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise ZeroVectorError(f"{what} contains a zero-norm vector")
    return m / norms


def _token_frame_sims(tokens_n: np.ndarray, frames_n: np.ndarray) -> np.ndarray:
    """Cosine table (B, M, L) from normalized tokens (M, D) and frames (B, L, D).

    Computed by broadcast-multiply-sum rather than matmul: BLAS kernels round
    edge columns differently, which would make a similarity depend on the
    frame's position and break exact permutation equivariance.
    """
    prod = tokens_n[None, :, None, :] * frames_n[:, None, :, :]
    return np.clip(prod.sum(axis=-1), -1.0, 1.0)


def _require_dim(name: str, m: np.ndarray, dim: int) -> None:
    if m.shape[-1] != dim:
        raise DimMismatchError(f"{name}: expected dim {dim}, got {m.shape[-1]}")


# --------------------------------------------------------------------------
# attention and text augmentation
# --------------------------------------------------------------------------

def cross_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Single-head scaled dot-product attention of query rows over key/value rows."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimMismatchError("attention inputs must be matrices")
    if q.shape[1] != k.shape[1]:
        raise DimMismatchError(
            f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise DimMismatchError(
            f"key rows {k.shape[0]} != value rows {v.shape[0]}")
    if k.shape[0] < 1:
        raise DimMismatchError("attention needs at least one key/value row")
    logits = (q @ k.T) / math.sqrt(q.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=1, keepdims=True)
    return weights @ v


def augment_global_text(global_text: TextTokens, subtexts: list[TextTokens] | tuple,
                        p: AttentionParams) -> np.ndarray:
    """Enrich global tokens with sub-text content: attention over the projected,
    concatenated sub-text tokens, plus a residual copy of the global tokens."""
    if len(subtexts) == 0:
        raise EmptySubtextsError("augmentation needs at least one sub-text")
    t = global_text.tokens
    dim = t.shape[1]
    for i, s in enumerate(subtexts):
        _require_dim(f"subtexts[{i}].tokens", s.tokens, dim)
    for name, w in (("wq", p.wq), ("wk", p.wk), ("wv", p.wv)):
        if w.shape != (dim, dim):
            raise DimMismatchError(f"attention.{name}: expected ({dim}, {dim}), got {w.shape}")
    stacked = np.concatenate([s.tokens for s in subtexts], axis=0)
    attended = cross_attention(t @ p.wq, stacked @ p.wk, stacked @ p.wv)
    return attended + t


# --------------------------------------------------------------------------
# importance weights and branch embeddings (batched over videos)
# --------------------------------------------------------------------------

def _coarse_importance_batch(t_hat: np.ndarray, frames: np.ndarray,
                             literal_form: bool = False) -> np.ndarray:
    """Coarse weights for frames (B, L, D) against augmented tokens (M, D).

    Default: per-token softmax over frames of cosine similarity, summed over
    tokens (each token contributes a unit of mass, so weights sum to M).
    ``literal_form`` divides exp-similarities by the plain similarity sum
    instead; kept for comparison, it is not a normalized distribution.
    """
    tn = _normalize_rows(t_hat, "augmented global tokens")
    fn = _normalize_rows(frames, "frames")
    sims = _token_frame_sims(tn, fn)                   # (B, M, L)
    if literal_form:
        denom = _frame_sum(sims, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_token = np.exp(sims) / denom
    else:
        per_token = _softmax_frames(sims)
    return per_token.sum(axis=-2)                      # (B, L)


def _fine_scores_batch(subtexts, frames: np.ndarray) -> np.ndarray:
    """Best-matching sub-text score per frame: max over sub-texts of the mean
    token-to-frame cosine similarity.  frames (B, L, D) -> (B, L)."""
    fn = _normalize_rows(frames, "frames")
    per_sub = []
    for i, sub in enumerate(subtexts):
        tn = _normalize_rows(sub.tokens, f"subtexts[{i}].tokens")
        sims = _token_frame_sims(tn, fn)               # (B, M_n, L)
        per_sub.append(sims.mean(axis=-2))
    return np.max(np.stack(per_sub, axis=0), axis=0)   # (B, L)


def _fine_importance_batch(subtexts, frames: np.ndarray) -> np.ndarray:
    return _softmax_frames(_fine_scores_batch(subtexts, frames))


def _weighted_frame_sum(frames: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Sum of frames (B, L, D) weighted by a (B, L), order-canonical."""
    return _frame_sum(frames * a[..., None], axis=-2)


def _mean_pool_batch(frames: np.ndarray) -> np.ndarray:
    return _frame_sum(frames, axis=-2) / frames.shape[-2]


# --------------------------------------------------------------------------
# single-video operations
# --------------------------------------------------------------------------

def coarse_importance(t_hat: np.ndarray, frames: np.ndarray,
                      literal_form: bool = False) -> np.ndarray:
    """Per-frame coarse weights; sums to the augmented token count."""
    t_hat = np.asarray(t_hat, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    if t_hat.shape[1] != frames.shape[1]:
        raise DimMismatchError(
            f"token dim {t_hat.shape[1]} != frame dim {frames.shape[1]}")
    return _coarse_importance_batch(t_hat, frames[None], literal_form)[0]


def coarse_embedding(frames: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Weighted frame sum."""
    frames = np.asarray(frames, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if frames.shape[0] != a.shape[0]:
        raise DimMismatchError(
            f"{a.shape[0]} weights for {frames.shape[0]} frames")
    return _weighted_frame_sum(frames[None], a[None])[0]


def fine_importance(subtexts, frames: np.ndarray) -> np.ndarray:
    """Per-frame fine weights (a probability vector over frames)."""
    if len(subtexts) == 0:
        raise EmptySubtextsError("fine importance needs at least one sub-text")
    frames = np.asarray(frames, dtype=np.float64)
    dim = frames.shape[1]
    for i, s in enumerate(subtexts):
        _require_dim(f"subtexts[{i}].tokens", s.tokens, dim)
    return _fine_importance_batch(subtexts, frames[None])[0]


def fine_embedding(frames: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Weighted frame sum (same contraction as the coarse branch)."""
    return coarse_embedding(frames, a)


def fuse(o_coarse: np.ndarray, o_fine: np.ndarray, p: FusionParams) -> np.ndarray:
    """Sum of the two feedforward heads applied to their branch embeddings."""
    o_coarse = np.asarray(o_coarse, dtype=np.float64)
    o_fine = np.asarray(o_fine, dtype=np.float64)
    if o_coarse.shape != o_fine.shape:
        raise DimMismatchError(
            f"branch shapes differ: {o_coarse.shape} vs {o_fine.shape}")
    return p.coarse.apply(o_coarse[None])[0] + p.fine.apply(o_fine[None])[0]


def mean_pool_baseline(frames: np.ndarray) -> np.ndarray:
    """Unweighted frame mean (the no-text aggregation baseline)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise DimMismatchError("mean pool expects an (L, D) matrix with L >= 1")
    return _mean_pool_batch(frames[None])[0]


def video_embedding(frames: FrameEmbeddings, bundle: ClassTextBundle,
                    p: ModelParams, variant: str = "full",
                    literal_eq8: bool = False) -> tuple[np.ndarray, ImportanceProfile]:
    """Class-conditional video embedding plus its per-frame importance profile.

    The result depends on the candidate class's texts: classification embeds
    the video once per candidate class.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    f = frames.frames
    t_hat = augment_global_text(bundle.global_text, bundle.subtexts, p.attention)
    a_coarse = coarse_importance(t_hat, f, literal_form=literal_eq8)
    a_fine = fine_importance(bundle.subtexts, f)
    profile = ImportanceProfile(coarse=a_coarse, fine=a_fine)
    if variant == "baseline":
        return mean_pool_baseline(f), profile
    if variant == "coarse":
        o = p.fusion.coarse.apply(coarse_embedding(f, a_coarse)[None])[0]
    elif variant == "fine":
        o = p.fusion.fine.apply(fine_embedding(f, a_fine)[None])[0]
    else:
        o = fuse(coarse_embedding(f, a_coarse), fine_embedding(f, a_fine), p.fusion)
    return o, profile


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------

def _batch_scores(frames: np.ndarray, classes, p: ModelParams, variant: str,
                  literal_eq8: bool) -> np.ndarray:
    """Cosine scores (B, C) for a stack of same-length videos (B, L, D)."""
    n_videos = frames.shape[0]
    cols = np.empty((n_videos, len(classes)))
    if variant == "baseline":
        pooled = _mean_pool_batch(frames)
        on = _normalize_rows(pooled, "mean-pooled embedding")
        for ci, bundle in enumerate(classes):
            tn = _normalize_rows(bundle.global_text.summary[None], "class summary")[0]
            cols[:, ci] = np.clip(on @ tn, -1.0, 1.0)
        return cols
    for ci, bundle in enumerate(classes):
        if variant in ("coarse", "full"):
            t_hat = augment_global_text(bundle.global_text, bundle.subtexts, p.attention)
            a_c = _coarse_importance_batch(t_hat, frames, literal_eq8)
            o_c = p.fusion.coarse.apply(_weighted_frame_sum(frames, a_c))
        if variant in ("fine", "full"):
            a_f = _fine_importance_batch(bundle.subtexts, frames)
            o_f = p.fusion.fine.apply(_weighted_frame_sum(frames, a_f))
        if variant == "coarse":
            o = o_c
        elif variant == "fine":
            o = o_f
        else:
            o = o_c + o_f
        on = _normalize_rows(o, "fused embedding")
        tn = _normalize_rows(bundle.global_text.summary[None], "class summary")[0]
        cols[:, ci] = np.clip(on @ tn, -1.0, 1.0)
    return cols


def classify(frames: FrameEmbeddings, classes, p: ModelParams,
             variant: str = "full", literal_eq8: bool = False) -> tuple[np.ndarray, int]:
    """Per-class cosine scores and the winning class (lowest index on ties)."""
    if len(classes) == 0:
        raise EmptyClassListError("classification needs at least one class")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    scores = _batch_scores(frames.frames[None], classes, p, variant, literal_eq8)[0]
    return scores, int(np.argmax(scores))


def classify_dataset(videos, classes, p: ModelParams, variant: str = "full",
                     literal_eq8: bool = False, threads: int = 1) -> np.ndarray:
    """Score matrix (V, C) for a list of videos; batches videos that share a
    frame count.  Results are independent of the thread count."""
    if len(classes) == 0:
        raise EmptyClassListError("classification needs at least one class")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    scores = np.empty((len(videos), len(classes)))
    by_length: dict[int, list[int]] = {}
    for i, v in enumerate(videos):
        by_length.setdefault(v.num_frames, []).append(i)

    jobs = []
    for indices in by_length.values():
        chunk = max(1, math.ceil(len(indices) / max(1, threads)))
        for start in range(0, len(indices), chunk):
            jobs.append(indices[start:start + chunk])

    def run(idx_list):
        stack = np.stack([videos[i].frames for i in idx_list])
        return idx_list, _batch_scores(stack, classes, p, variant, literal_eq8)

    if threads <= 1 or len(jobs) <= 1:
        results = [run(j) for j in jobs]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    for idx_list, block in results:
        scores[idx_list, :] = block
    return scores
