"""Contrastive training of the alignment pipeline's learnable parameters.

The batch loss is a two-direction InfoNCE over the class-conditional logit
matrix y[b, c] = cos(class summary c, video embedding of b under c) / tau:
text-to-video contrasts videos within a class column, video-to-text
contrasts classes within a video row, and videos sharing a class count as
mutual positives.  Gradients are exact, produced by reverse-mode
differentiation of the whole pipeline, and are verified against central
finite differences of an independently coded forward pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import (
    ConfigError,
    EmptyClassListError,
    EmptySampleError,
    NonFiniteGradientError,
    ShapeMismatchError,
)
from .pipeline import (
    ACTIVATIONS,
    VARIANTS,
    FfnParams,
    ModelParams,
    _fine_importance_batch,
    _mean_pool_batch,
    _normalize_rows,
    _weighted_frame_sum,
    classify_dataset,
    init_params,
)
from .store import EmbeddingDataset, FrameEmbeddings, read_tensor, write_tensor

TRAINABLE_BY_VARIANT = {
    "baseline": (),
    "coarse": ("attention.", "fusion.coarse."),
    "fine": ("fusion.fine.",),
    "full": ("attention.", "fusion.coarse.", "fusion.fine."),
}


def trainable_names(p: ModelParams, variant: str) -> list[str]:
    prefixes = TRAINABLE_BY_VARIANT[variant]
    return [n for n in p.tensors() if any(n.startswith(pre) for pre in prefixes)]


# --------------------------------------------------------------------------
# batches and logits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Batch:
    """B single-label videos plus their label vector."""

    videos: tuple[FrameEmbeddings, ...]
    labels: np.ndarray   # (B,) int

    def __post_init__(self):
        if len(self.videos) < 1:
            raise ConfigError("a batch needs at least one video")
        if len(self.videos) != len(self.labels):
            raise ConfigError("labels do not match the batch size")

    @staticmethod
    def from_videos(videos) -> "Batch":
        return Batch(tuple(videos), np.array([v.label for v in videos], dtype=np.int64))


def compute_logits(batch: Batch, classes, p: ModelParams, variant: str = "full",
                   literal_eq8: bool = False) -> np.ndarray:
    """Temperature-scaled cosine score matrix (B, C)."""
    scores = classify_dataset(list(batch.videos), classes, p, variant, literal_eq8)
    return scores / p.tau


# --------------------------------------------------------------------------
# losses (reference numpy path; scalar-oracle checked)
# --------------------------------------------------------------------------

def _log_softmax(y: np.ndarray, axis: int) -> np.ndarray:
    m = y.max(axis=axis, keepdims=True)
    return y - (m + np.log(np.exp(y - m).sum(axis=axis, keepdims=True)))


def loss_t2v(y: np.ndarray, labels: np.ndarray) -> float:
    """Text-to-video InfoNCE: each class column contrasts its videos against
    the whole batch; videos sharing the anchor's class are positives."""
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels)
    b_total = y.shape[0]
    ls = _log_softmax(y, axis=0)
    total = 0.0
    for b in range(b_total):
        positives = np.nonzero(labels == labels[b])[0]
        total += ls[positives, labels[b]].sum() / len(positives)
    return -total / b_total


def loss_v2t(y: np.ndarray, labels: np.ndarray) -> float:
    """Video-to-text InfoNCE: each video row contrasts its class against all
    classes; same-class videos are positives."""
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels)
    b_total = y.shape[0]
    ls = _log_softmax(y, axis=1)
    total = 0.0
    for b in range(b_total):
        positives = np.nonzero(labels == labels[b])[0]
        total += ls[positives, labels[b]].sum() / len(positives)
    return -total / b_total


def total_loss(y: np.ndarray, labels: np.ndarray, lam: float) -> float:
    return loss_t2v(y, labels) + lam * loss_v2t(y, labels)


# --------------------------------------------------------------------------
# differentiable forward (autodiff graph)
# --------------------------------------------------------------------------

def _graph_params(p: ModelParams, variant: str) -> dict[str, ad.Tensor]:
    tracked = set(trainable_names(p, variant))
    return {
        name: ad.Tensor(value, requires_grad=(name in tracked))
        for name, value in p.tensors().items()
    }


def _graph_ffn(x: ad.Tensor, g: dict[str, ad.Tensor], branch: str,
               ffn: FfnParams) -> ad.Tensor:
    y = x @ g[f"fusion.{branch}.weight"].swap_last() + g[f"fusion.{branch}.bias"]
    if ffn.weight2 is None:
        return y
    y = y.tanh() if ffn.activation == "tanh" else y.relu()
    return y @ g[f"fusion.{branch}.weight2"].swap_last() + g[f"fusion.{branch}.bias2"]


def _graph_normalize(x: ad.Tensor) -> ad.Tensor:
    return x / (x * x).sum(axis=-1, keepdims=True).sqrt()


def _graph_logits(batch: Batch, classes, p: ModelParams, variant: str,
                  literal_eq8: bool) -> tuple[ad.Tensor, np.ndarray, dict[str, ad.Tensor]]:
    """Build the logit matrix as a graph tensor.

    Videos are grouped by frame count; the returned ``order`` gives the video
    index of each logit row, so labels must be permuted accordingly.
    """
    if len(classes) == 0:
        raise EmptyClassListError("the logit matrix needs at least one class")
    g = _graph_params(p, variant)
    by_length: dict[int, list[int]] = {}
    for i, v in enumerate(batch.videos):
        by_length.setdefault(v.num_frames, []).append(i)
    groups = [(np.stack([batch.videos[i].frames for i in idx]), idx)
              for idx in by_length.values()]
    order = np.concatenate([idx for _, idx in groups])

    dim = classes[0].global_text.tokens.shape[1]
    scale = 1.0 / math.sqrt(dim)
    columns_per_group: list[list[ad.Tensor]] = [[] for _ in groups]
    for bundle in classes:
        t_const = ad.Tensor(bundle.global_text.tokens)
        t_summary_n = _normalize_rows(bundle.global_text.summary[None], "summary")[0]
        if variant in ("coarse", "full"):
            stacked = np.concatenate([s.tokens for s in bundle.subtexts], axis=0)
            q = t_const @ g["attention.wq"]
            k = ad.Tensor(stacked) @ g["attention.wk"]
            v = ad.Tensor(stacked) @ g["attention.wv"]
            att = ((q @ k.swap_last()) * scale).softmax(axis=-1) @ v
            t_hat = att + t_const
            t_hat_n = _graph_normalize(t_hat)
        for gi, (frames, _) in enumerate(groups):
            n_vid, n_frames, _ = frames.shape
            frames_n = _normalize_rows(frames, "frames")
            if variant in ("coarse", "full"):
                sims = t_hat_n @ ad.Tensor(frames_n.swapaxes(-1, -2))   # (B, M, L)
                if literal_eq8:
                    per_token = sims.exp() / sims.sum(axis=-1, keepdims=True)
                else:
                    per_token = sims.softmax(axis=-1)
                a_c = per_token.sum(axis=-2)                             # (B, L)
                o_c = (a_c.reshape(n_vid, 1, n_frames) @ ad.Tensor(frames)).reshape(n_vid, dim)
                o_c = _graph_ffn(o_c, g, "coarse", p.fusion.coarse)
            if variant in ("fine", "full"):
                a_f = _fine_importance_batch(bundle.subtexts, frames)    # constants
                o_f_const = _weighted_frame_sum(frames, a_f)
                o_f = _graph_ffn(ad.Tensor(o_f_const), g, "fine", p.fusion.fine)
            if variant == "baseline":
                o = ad.Tensor(_mean_pool_batch(frames))
            elif variant == "coarse":
                o = o_c
            elif variant == "fine":
                o = o_f
            else:
                o = o_c + o_f
            col = (_graph_normalize(o) * ad.Tensor(t_summary_n)).sum(axis=-1)
            columns_per_group[gi].append(col * (1.0 / p.tau))
    rows = [ad.stack_columns(cols) for cols in columns_per_group]
    y = rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)
    return y, order, g


def _graph_total_loss(y: ad.Tensor, labels: np.ndarray, n_classes: int,
                      lam: float) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """InfoNCE on a graph logit matrix.

    Uses the algebraically collapsed form of the per-anchor double sum: with
    positives weighted 1/|k_b|, the coefficient of every y[b, label_b] and of
    every column/row log-sum-exp reduces to 1 (tests pin this against the
    literal reference implementation).
    """
    b_total = len(labels)
    onehot = np.zeros((b_total, n_classes))
    onehot[np.arange(b_total), labels] = 1.0
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    pos = (y * onehot).sum()
    t2v = ((y.logsumexp(axis=0) * counts).sum() - pos) * (1.0 / b_total)
    v2t = (y.logsumexp(axis=1).sum() - pos) * (1.0 / b_total)
    return t2v + lam * v2t, t2v, v2t


def backward(batch: Batch, classes, p: ModelParams, lam: float | None = None,
             variant: str = "full", literal_eq8: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    """Total loss and its exact gradient for every trainable tensor.

    Embeddings and the temperature are constants; only the attention
    projections and feedforward heads receive gradients.
    """
    if lam is None:
        lam = p.lam
    y, order, g = _graph_logits(batch, classes, p, variant, literal_eq8)
    loss, _, _ = _graph_total_loss(y, batch.labels[order], len(classes), lam)
    grads: dict[str, np.ndarray] = {}
    if loss.requires_grad:
        loss.backward()
        for name in trainable_names(p, variant):
            grad = g[name].grad
            if grad is None:
                grad = np.zeros_like(g[name].value)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradientError(f"gradient of {name} is non-finite")
            grads[name] = grad
    return float(loss.value), grads


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------

def finite_difference_check(loss_fn, tensors: dict[str, np.ndarray],
                            analytic: dict[str, np.ndarray], h: float = 1e-5,
                            n_coords: int = 200, seed: int = 0) -> float:
    """Worst relative error between analytic gradients and central differences.

    Samples coordinates spanning every tensor (all of them if the budget
    allows).  ``loss_fn`` is a zero-argument closure reading the live arrays
    in ``tensors``; entries are perturbed in place and restored.
    """
    if n_coords <= 0:
        raise EmptySampleError("coordinate sample is empty")
    names = list(analytic.keys())
    if not names:
        raise EmptySampleError("no trainable tensors to check")
    sizes = {n: tensors[n].size for n in names}
    total = sum(sizes.values())
    rng = np.random.default_rng(seed)
    if n_coords >= total:
        chosen = {n: np.arange(sizes[n]) for n in names}
    else:
        base = {n: max(1, (n_coords * sizes[n]) // total) for n in names}
        while sum(base.values()) < n_coords:
            for n in names:
                if base[n] < sizes[n] and sum(base.values()) < n_coords:
                    base[n] += 1
        chosen = {n: np.sort(rng.choice(sizes[n], size=min(base[n], sizes[n]),
                                        replace=False)) for n in names}
    worst = 0.0
    for name in names:
        arr = tensors[name]
        flat = arr.reshape(-1)
        for idx in chosen[name]:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = loss_fn()
            flat[idx] = orig - h
            f_minus = loss_fn()
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[idx]
            # denominator floored so near-zero gradients compare absolutely
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


def grad_check(batch: Batch, classes, p: ModelParams, h: float = 1e-5,
               n_coords: int = 200, seed: int = 0, variant: str = "full",
               lam: float | None = None, literal_eq8: bool = False) -> float:
    """Compare `backward` against central differences of the numpy forward."""
    if lam is None:
        lam = p.lam
    _, analytic = backward(batch, classes, p, lam, variant, literal_eq8)
    if not analytic:
        raise EmptySampleError(f"variant {variant!r} has no trainable tensors")
    probe = p.copy()
    tensors = {n: t for n, t in probe.tensors().items() if n in analytic}

    def loss_fn() -> float:
        y = compute_logits(batch, classes, probe, variant, literal_eq8)
        return total_loss(y, batch.labels, lam)

    return finite_difference_check(loss_fn, tensors, analytic, h, n_coords, seed)


# --------------------------------------------------------------------------
# AdamW
# --------------------------------------------------------------------------

@dataclass
class OptimState:
    """Decoupled-weight-decay Adam moments plus schedule hyperparameters."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def init(tensors: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8,
             weight_decay: float = 0.0) -> "OptimState":
        return OptimState(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
            m={n: np.zeros_like(t) for n, t in tensors.items()},
            v={n: np.zeros_like(t) for n, t in tensors.items()},
        )


def adamw_step(p: ModelParams, g: dict[str, np.ndarray],
               s: OptimState) -> tuple[ModelParams, OptimState]:
    """One AdamW update (in place) over the tensors named in the gradient set."""
    tensors = p.tensors()
    s.step += 1
    bc1 = 1.0 - s.beta1 ** s.step
    bc2 = 1.0 - s.beta2 ** s.step
    for name, grad in g.items():
        param = tensors[name]
        if grad.shape != param.shape:
            raise ShapeMismatchError(
                f"gradient for {name} has shape {grad.shape}, parameter is {param.shape}")
        if name not in s.m:
            s.m[name] = np.zeros_like(param)
            s.v[name] = np.zeros_like(param)
        if s.weight_decay != 0.0:
            param -= s.lr * s.weight_decay * param
        s.m[name] = s.beta1 * s.m[name] + (1.0 - s.beta1) * grad
        s.v[name] = s.beta2 * s.v[name] + (1.0 - s.beta2) * grad * grad
        m_hat = s.m[name] / bc1
        v_hat = s.v[name] / bc2
        param -= s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
    return p, s


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    warmup_epochs: int = 5
    schedule: str = "cosine"          # cosine | constant
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 1.0
    tau: float = 0.05
    seed: int = 0
    variant: str = "full"
    literal_eq8: bool = False
    hidden: int | None = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**d)

    @staticmethod
    def from_file(path: Path | str) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return TrainConfig.from_dict(d)

    def merged(self, overrides: dict) -> "TrainConfig":
        if "lambda" in overrides:
            overrides = dict(overrides)
            overrides["lam"] = overrides.pop("lambda")
        return replace(self, **overrides)


def schedule_lr(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 0-based epoch: linear warm-up then cosine decay."""
    if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
        return cfg.lr * (epoch + 1) / cfg.warmup_epochs
    if cfg.schedule == "constant":
        return cfg.lr
    span = max(1, cfg.epochs - cfg.warmup_epochs)
    progress = (epoch - cfg.warmup_epochs) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss_t2v: float
    loss_v2t: float
    total: float
    train_top1: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochStats]
    trained_on: tuple[str, ...]


def history_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,loss_t2v,loss_v2t,total,train_top1"]
    for s in history:
        lines.append(f"{s.epoch},{s.loss_t2v:.17g},{s.loss_v2t:.17g},"
                     f"{s.total:.17g},{s.train_top1:.17g}")
    return "\n".join(lines) + "\n"


def _epoch_stats(epoch, videos, labels, classes, p, cfg) -> EpochStats:
    """Whole-dataset losses and accuracy, a pure function of the parameters."""
    scores = classify_dataset(videos, classes, p, cfg.variant, cfg.literal_eq8)
    y = scores / cfg.tau
    t2v = loss_t2v(y, labels)
    v2t = loss_v2t(y, labels)
    return EpochStats(
        epoch=epoch, loss_t2v=t2v, loss_v2t=v2t, total=t2v + cfg.lam * v2t,
        train_top1=float(np.mean(scores.argmax(axis=1) == labels)),
    )


def train(ds: EmbeddingDataset, cfg: TrainConfig, seed: int | None = None) -> TrainResult:
    """Deterministic AdamW training over the whole dataset.

    The seed drives parameter initialization and batch shuffling; two runs
    with the same seed produce bit-identical parameters and histories.
    """
    if seed is None:
        seed = cfg.seed
    videos = list(ds.videos)
    labels = np.array([v.label for v in videos], dtype=np.int64)
    params = init_params(ds.dim, seed=seed, hidden=cfg.hidden,
                         activation=cfg.activation, tau=cfg.tau, lam=cfg.lam)
    names = trainable_names(params, cfg.variant)
    state = OptimState.init(
        {n: t for n, t in params.tensors().items() if n in names},
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    rng = np.random.default_rng(seed)
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        state.lr = schedule_lr(cfg, epoch)
        order = rng.permutation(len(videos))
        if names:
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = Batch(tuple(videos[i] for i in idx), labels[idx])
                y, row_order, g = _graph_logits(batch, ds.classes, params,
                                                cfg.variant, cfg.literal_eq8)
                loss, _, _ = _graph_total_loss(y, batch.labels[row_order],
                                               len(ds.classes), cfg.lam)
                loss.backward()
                grads = {}
                for name in names:
                    grad = g[name].grad
                    if grad is None:
                        grad = np.zeros_like(g[name].value)
                    if not np.all(np.isfinite(grad)):
                        raise NonFiniteGradientError(f"gradient of {name} is non-finite")
                    grads[name] = grad
                adamw_step(params, grads, state)
        history.append(_epoch_stats(epoch, videos, labels, ds.classes, params, cfg))
    return TrainResult(params=params, history=history, trained_on=ds.class_names)


# --------------------------------------------------------------------------
# parameter serialization (raw float64 tensors + a small manifest)
# --------------------------------------------------------------------------

PARAMS_NAME = "params.json"


def save_params(result_params: ModelParams, root: Path | str,
                trained_on: tuple[str, ...] = ()) -> None:
    root = Path(root)
    tensors = result_params.tensors()
    meta: dict = {
        "format": "vtalign-params",
        "version": 1,
        "tau": result_params.tau,
        "lambda": result_params.lam,
        "activation": result_params.fusion.coarse.activation,
        "hidden": (None if result_params.fusion.coarse.weight2 is None
                   else int(result_params.fusion.coarse.weight.shape[0])),
        "trained_on": list(trained_on),
        "tensors": {},
    }
    root.mkdir(parents=True, exist_ok=True)
    for name, t in tensors.items():
        a = t if t.ndim == 2 else t.reshape(1, -1)
        rel = name.replace(".", "_") + ".f64"
        write_tensor(root / rel, a, dtype="<f8")
        meta["tensors"][name] = {"rows": int(a.shape[0]), "cols": int(a.shape[1]),
                                 "ndim": int(t.ndim), "file": rel}
    (root / PARAMS_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_params(root: Path | str) -> tuple[ModelParams, tuple[str, ...]]:
    root = Path(root)
    meta = json.loads((root / PARAMS_NAME).read_text())
    loaded: dict[str, np.ndarray] = {}
    for name, spec in meta["tensors"].items():
        a = np.array(read_tensor(root / spec["file"], spec["rows"], spec["cols"],
                                 dtype="<f8"))
        loaded[name] = a.reshape(-1) if spec["ndim"] == 1 else a
    dim = loaded["attention.wq"].shape[0]
    params = init_params(dim, seed=0, hidden=meta["hidden"],
                         activation=meta["activation"], tau=meta["tau"],
                         lam=meta["lambda"])
    for name, t in params.tensors().items():
        t[...] = loaded[name]
    return params, tuple(meta["trained_on"])
