"""On-disk and in-memory data model for frame/text embeddings.

A dataset lives in a directory with a ``manifest.json`` plus raw tensor
files (``*.f32``: little-endian IEEE-754 binary32, row-major, byte length =
rows * cols * 4).  Arithmetic is done in float64; storage is float32, so a
save -> load round trip is bit-exact at storage precision.

Manifest keys (the contract with any exporter producing datasets):

    format: "vtalign-embedding-store"   version: 1   dim: <int>
    videos:  [{id, frames, labels, tensor}]
    classes: [{name,
               global: {tokens, tokens_tensor, summary_tensor},
               subtexts: [{tokens, tokens_tensor, summary_tensor}]}]

Sub-text candidate sets use a sibling ``candidates.json`` manifest:

    format: "vtalign-subtext-candidates"   version: 1   dim: <int>
    classes: [{class_index, groups: [[{tokens, tokens_tensor,
                                       summary_tensor}, ...], ...]}]
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    IoFailureError,
    ManifestParseError,
    MissingFileError,
    NonFiniteError,
    ShapeMismatchError,
    ValidationError,
    ZeroVectorError,
)

MANIFEST_NAME = "manifest.json"
CANDIDATES_NAME = "candidates.json"
STORE_FORMAT = "vtalign-embedding-store"
CANDIDATES_FORMAT = "vtalign-subtext-candidates"
STORE_VERSION = 1


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameEmbeddings:
    """One video's per-frame embedding matrix plus its label set.

    Single-label videos hold a one-element label set.
    """

    video_id: str
    frames: np.ndarray          # (L, D) float64
    labels: tuple[int, ...]     # sorted, non-empty

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def label(self) -> int:
        """The single label; only valid for single-label videos."""
        if len(self.labels) != 1:
            raise ValidationError(
                f"video {self.video_id!r} has {len(self.labels)} labels; "
                "a single label was required"
            )
        return self.labels[0]


@dataclass(frozen=True)
class TextTokens:
    """Token matrix plus the encoder's sentence-level summary vector."""

    tokens: np.ndarray    # (M, D) float64
    summary: np.ndarray   # (D,) float64


@dataclass(frozen=True)
class ClassTextBundle:
    """Global text and N sub-texts for one action class."""

    class_name: str
    global_text: TextTokens
    subtexts: tuple[TextTokens, ...]

    @property
    def num_subtexts(self) -> int:
        return len(self.subtexts)


@dataclass(frozen=True)
class EmbeddingDataset:
    """Validated collection of videos and class text bundles."""

    dim: int
    videos: tuple[FrameEmbeddings, ...]
    classes: tuple[ClassTextBundle, ...]

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(c.class_name for c in self.classes)

    def with_subtexts(self, subtexts_per_class: list[tuple[TextTokens, ...]]) -> "EmbeddingDataset":
        """A copy of the dataset with every class's sub-texts replaced."""
        if len(subtexts_per_class) != len(self.classes):
            raise ValidationError(
                f"got sub-texts for {len(subtexts_per_class)} classes, "
                f"dataset has {len(self.classes)}"
            )
        classes = tuple(
            ClassTextBundle(c.class_name, c.global_text, tuple(subs))
            for c, subs in zip(self.classes, subtexts_per_class)
        )
        return EmbeddingDataset(self.dim, self.videos, classes)


@dataclass(frozen=True)
class SubtextCandidateSet:
    """Candidate sub-text groups for one class (selection picks one group)."""

    class_index: int
    groups: tuple[tuple[TextTokens, ...], ...]


@dataclass
class ValidationReport:
    """Every invariant violation found, with its location."""

    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, location: str, message: str) -> None:
        self.issues.append(f"{location}: {message}")

    def __str__(self) -> str:
        return "\n".join(self.issues) if self.issues else "ok"


# --------------------------------------------------------------------------
# small numeric helpers
# --------------------------------------------------------------------------

def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit norm, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    n = math.sqrt(float(np.dot(v, v)))
    if n == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / n


def _as_f64(x) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    a.flags.writeable = False
    return a


def frozen_array(x) -> np.ndarray:
    """Read-only float64 copy; loaded datasets are immutable by contract."""
    a = np.array(x, dtype=np.float64)
    a.flags.writeable = False
    return a


# --------------------------------------------------------------------------
# tensor file IO
# --------------------------------------------------------------------------

def write_tensor(path: Path, array: np.ndarray, dtype: str = "<f4") -> None:
    """Write a 2-d array as raw little-endian floats, row-major."""
    a = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise IoFailureError(f"{path}: only 2-d tensors are stored, got ndim={a.ndim}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(a.astype(dtype).tobytes(order="C"))
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc


def read_tensor(path: Path, rows: int, cols: int, dtype: str = "<f4") -> np.ndarray:
    """Read a raw float tensor, checking byte length against the manifest shape."""
    if not path.is_file():
        raise MissingFileError(f"tensor file not found: {path}")
    data = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    expected = rows * cols * itemsize
    if len(data) != expected:
        raise ShapeMismatchError(
            f"{path}: manifest says {rows}x{cols} ({expected} bytes), "
            f"file holds {len(data)} bytes"
        )
    a = np.frombuffer(data, dtype=dtype).astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{path}: tensor contains non-finite values")
    return _as_f64(a)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def _check_matrix(report: ValidationReport, loc: str, m: np.ndarray, dim: int,
                  min_rows: int = 1, nonzero_rows: bool = True) -> None:
    if m.ndim != 2:
        report.add(loc, f"expected a matrix, got ndim={m.ndim}")
        return
    rows, cols = m.shape
    if rows < min_rows:
        report.add(loc, f"needs at least {min_rows} row(s), has {rows}")
    if cols != dim:
        report.add(loc, f"dimension mismatch: {cols} columns, dataset dim is {dim}")
    if not np.all(np.isfinite(m)):
        report.add(loc, "contains non-finite values")
        return
    if nonzero_rows and rows > 0:
        norms = np.sqrt((m * m).sum(axis=1))
        for i in np.nonzero(norms == 0.0)[0]:
            report.add(loc, f"row {int(i)} has zero norm")


def _check_text(report: ValidationReport, loc: str, t: TextTokens, dim: int) -> None:
    _check_matrix(report, f"{loc}.tokens", t.tokens, dim)
    s = t.summary
    if s.ndim != 1 or s.shape[0] != dim:
        report.add(f"{loc}.summary", f"expected a vector of dim {dim}, got shape {s.shape}")
        return
    if not np.all(np.isfinite(s)):
        report.add(f"{loc}.summary", "contains non-finite values")
    elif float(np.dot(s, s)) == 0.0:
        report.add(f"{loc}.summary", "has zero norm")


def validate(ds: EmbeddingDataset) -> ValidationReport:
    """Check every dataset invariant; the report is empty iff the dataset is valid."""
    report = ValidationReport()
    if ds.dim < 1:
        report.add("dataset", f"dim must be >= 1, got {ds.dim}")
    names = [c.class_name for c in ds.classes]
    if len(set(names)) != len(names):
        report.add("classes", "class names are not unique")
    for ci, bundle in enumerate(ds.classes):
        loc = f"classes[{ci}]"
        if not bundle.class_name:
            report.add(loc, "empty class name")
        _check_text(report, f"{loc}.global", bundle.global_text, ds.dim)
        for si, sub in enumerate(bundle.subtexts):
            _check_text(report, f"{loc}.subtexts[{si}]", sub, ds.dim)
    n_classes = len(ds.classes)
    seen_ids: set[str] = set()
    for vi, video in enumerate(ds.videos):
        loc = f"videos[{vi}]"
        if video.video_id in seen_ids:
            report.add(loc, f"duplicate video id {video.video_id!r}")
        seen_ids.add(video.video_id)
        _check_matrix(report, f"{loc}.frames", video.frames, ds.dim)
        if not video.labels:
            report.add(loc, "empty label set")
        for lab in video.labels:
            if not (0 <= lab < n_classes):
                report.add(loc, f"label {lab} out of range ({n_classes} classes)")
    return report


# --------------------------------------------------------------------------
# save / load
# --------------------------------------------------------------------------

def _text_entry(prefix: str, t: TextTokens) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    tokens_rel = f"tensors/{prefix}_tokens.f32"
    summary_rel = f"tensors/{prefix}_summary.f32"
    entry = {
        "tokens": int(t.tokens.shape[0]),
        "tokens_tensor": tokens_rel,
        "summary_tensor": summary_rel,
    }
    return entry, [(tokens_rel, t.tokens), (summary_rel, t.summary.reshape(1, -1))]


def save_dataset(ds: EmbeddingDataset, root: Path | str) -> None:
    """Write manifest + tensor files; rejects invalid datasets up front."""
    report = validate(ds)
    if not report.ok:
        raise ValidationError(f"dataset is invalid:\n{report}")
    root = Path(root)
    writes: list[tuple[str, np.ndarray]] = []
    videos_meta = []
    for v in ds.videos:
        rel = f"tensors/video_{v.video_id}.f32"
        videos_meta.append({
            "id": v.video_id,
            "frames": int(v.num_frames),
            "labels": [int(x) for x in v.labels],
            "tensor": rel,
        })
        writes.append((rel, v.frames))
    classes_meta = []
    for ci, bundle in enumerate(ds.classes):
        g_entry, g_writes = _text_entry(f"class{ci}_global", bundle.global_text)
        writes.extend(g_writes)
        sub_meta = []
        for si, sub in enumerate(bundle.subtexts):
            s_entry, s_writes = _text_entry(f"class{ci}_sub{si}", sub)
            sub_meta.append(s_entry)
            writes.extend(s_writes)
        classes_meta.append({
            "name": bundle.class_name,
            "global": g_entry,
            "subtexts": sub_meta,
        })
    manifest = {
        "format": STORE_FORMAT,
        "version": STORE_VERSION,
        "dim": int(ds.dim),
        "videos": videos_meta,
        "classes": classes_meta,
    }
    try:
        root.mkdir(parents=True, exist_ok=True)
        for rel, arr in writes:
            write_tensor(root / rel, arr)
        (root / MANIFEST_NAME).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise IoFailureError(f"{root}: {exc}") from exc


def _manifest_get(obj: dict, key: str, where: str):
    if key not in obj:
        raise ManifestParseError(f"{where}: missing key {key!r}")
    return obj[key]


def _load_text(root: Path, entry: dict, dim: int, where: str) -> TextTokens:
    rows = int(_manifest_get(entry, "tokens", where))
    tokens = read_tensor(root / _manifest_get(entry, "tokens_tensor", where), rows, dim)
    summary = read_tensor(root / _manifest_get(entry, "summary_tensor", where), 1, dim)
    return TextTokens(tokens=tokens, summary=_as_f64(summary[0]))


def load_dataset(root: Path | str) -> EmbeddingDataset:
    """Load and fully validate a dataset directory."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestParseError(f"{manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ManifestParseError(f"{manifest_path}: manifest is not an object")
    fmt = _manifest_get(manifest, "format", "manifest")
    if fmt != STORE_FORMAT:
        raise ManifestParseError(f"{manifest_path}: unknown format {fmt!r}")
    dim = int(_manifest_get(manifest, "dim", "manifest"))

    videos = []
    for i, vm in enumerate(_manifest_get(manifest, "videos", "manifest")):
        where = f"videos[{i}]"
        frames = read_tensor(
            root / _manifest_get(vm, "tensor", where),
            int(_manifest_get(vm, "frames", where)),
            dim,
        )
        labels = tuple(sorted(int(x) for x in _manifest_get(vm, "labels", where)))
        videos.append(FrameEmbeddings(
            video_id=str(_manifest_get(vm, "id", where)),
            frames=frames,
            labels=labels,
        ))

    classes = []
    for i, cm in enumerate(_manifest_get(manifest, "classes", "manifest")):
        where = f"classes[{i}]"
        global_text = _load_text(root, _manifest_get(cm, "global", where), dim, where)
        subtexts = tuple(
            _load_text(root, sm, dim, f"{where}.subtexts[{j}]")
            for j, sm in enumerate(_manifest_get(cm, "subtexts", where))
        )
        classes.append(ClassTextBundle(
            class_name=str(_manifest_get(cm, "name", where)),
            global_text=global_text,
            subtexts=subtexts,
        ))

    ds = EmbeddingDataset(dim=dim, videos=tuple(videos), classes=tuple(classes))
    report = validate(ds)
    if not report.ok:
        raise ValidationError(f"{root}: dataset failed validation:\n{report}")
    return ds


# --------------------------------------------------------------------------
# candidate sub-text sets
# --------------------------------------------------------------------------

def save_candidates(candidates: list[SubtextCandidateSet], dim: int, root: Path | str) -> None:
    """Write candidate groups as a candidates.json + tensor files."""
    root = Path(root)
    writes: list[tuple[str, np.ndarray]] = []
    classes_meta = []
    for cand in candidates:
        groups_meta = []
        for gi, group in enumerate(cand.groups):
            if not group:
                raise ValidationError(
                    f"candidates for class {cand.class_index}: group {gi} is empty"
                )
            group_meta = []
            for si, sub in enumerate(group):
                prefix = f"cand{cand.class_index}_g{gi}_s{si}"
                entry, t_writes = _text_entry(prefix, sub)
                group_meta.append(entry)
                writes.extend(t_writes)
            groups_meta.append(group_meta)
        classes_meta.append({"class_index": int(cand.class_index), "groups": groups_meta})
    manifest = {
        "format": CANDIDATES_FORMAT,
        "version": STORE_VERSION,
        "dim": int(dim),
        "classes": classes_meta,
    }
    try:
        root.mkdir(parents=True, exist_ok=True)
        for rel, arr in writes:
            write_tensor(root / rel, arr)
        (root / CANDIDATES_NAME).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise IoFailureError(f"{root}: {exc}") from exc


def load_candidates(root: Path | str) -> tuple[int, list[SubtextCandidateSet]]:
    """Load candidate sub-text groups; returns (dim, per-class candidate sets)."""
    root = Path(root)
    path = root / CANDIDATES_NAME
    if not path.is_file():
        raise MissingFileError(f"candidates manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestParseError(f"{path}: {exc}") from exc
    fmt = _manifest_get(manifest, "format", "candidates")
    if fmt != CANDIDATES_FORMAT:
        raise ManifestParseError(f"{path}: unknown format {fmt!r}")
    dim = int(_manifest_get(manifest, "dim", "candidates"))
    out = []
    for cm in _manifest_get(manifest, "classes", "candidates"):
        where = f"candidates[{cm.get('class_index', '?')}]"
        groups = tuple(
            tuple(_load_text(root, sm, dim, where) for sm in group)
            for group in _manifest_get(cm, "groups", where)
        )
        out.append(SubtextCandidateSet(
            class_index=int(_manifest_get(cm, "class_index", where)),
            groups=groups,
        ))
    return dim, out
