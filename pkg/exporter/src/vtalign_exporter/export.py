"""Export jobs: text bundles and per-video frame embeddings into the store.

Video sources may be ordinary video files (decoded with OpenCV when
available) or ``.npy`` stacks shaped (T, H, W, 3) uint8, which keeps the
whole pipeline runnable without codecs.  Frames are sampled uniformly over
the clip.  All writes go through the manifest upsert helpers, so re-running
a job leaves a previously valid dataset valid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import store_format
from .errors import DecodeFailure, EmptyText, ExporterError
from .subtexts import DEFAULT_TEMPLATE

GLOBAL_PROMPT_TEMPLATE = "a photo of a {name}"


@dataclass(frozen=True)
class ExportJob:
    """Source spec for one export run."""

    out_root: Path
    encoder_spec: str
    frames: int = 8
    videos: tuple[dict, ...] = ()          # {"path": ..., "id": ..., "labels": [...]}
    class_names: tuple[str, ...] = ()
    subtexts: dict = field(default_factory=dict)   # name -> list[str]
    prompt_template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.frames < 1:
            raise ExporterError(f"frames must be >= 1, got {self.frames}")

    @staticmethod
    def from_file(path: Path | str, encoder_spec: str, out_root: Path | str) -> "ExportJob":
        spec = json.loads(Path(path).read_text())
        return ExportJob(
            out_root=Path(out_root),
            encoder_spec=encoder_spec,
            frames=int(spec.get("frames", 8)),
            videos=tuple(spec.get("videos", ())),
            class_names=tuple(spec.get("classes", ())),
            subtexts=dict(spec.get("subtexts", {})),
            prompt_template=spec.get("prompt_template", DEFAULT_TEMPLATE),
        )


def _decode_npy(path: Path, n_frames: int) -> list[np.ndarray]:
    stack = np.load(path)
    if stack.ndim != 4 or stack.shape[0] < 1:
        raise DecodeFailure(f"{path}: expected a (T, H, W, 3) stack, got {stack.shape}")
    idx = np.linspace(0, stack.shape[0] - 1, n_frames).round().astype(int)
    return [stack[i] for i in idx]


def _decode_video(path: Path, n_frames: int) -> list[np.ndarray]:
    try:
        import cv2
    except ImportError as exc:
        raise DecodeFailure(
            f"{path}: video decoding needs opencv-python (or use .npy stacks)") from exc
    cap = cv2.VideoCapture(str(path))
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    cap.release()
    if not frames:
        raise DecodeFailure(f"{path}: no decodable frames")
    idx = np.linspace(0, len(frames) - 1, n_frames).round().astype(int)
    return [frames[i] for i in idx]


def sample_frames(path: Path | str, n_frames: int) -> list[np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DecodeFailure(f"video file not found: {path}")
    if path.suffix == ".npy":
        return _decode_npy(path, n_frames)
    return _decode_video(path, n_frames)


def export_text_embeddings(class_names, subtexts_per_class: dict, encoder,
                           out_root: Path | str,
                           candidates: dict | None = None) -> None:
    """Write class text bundles (and optional candidate groups) to the store.

    ``subtexts_per_class`` maps a class name to its chosen list of sub-text
    strings; ``candidates``, when given, maps a class name to several lists
    and is written alongside as a candidates store.
    """
    out_root = Path(out_root)
    manifest = store_format.load_manifest(out_root) or store_format.empty_manifest(encoder.dim)
    if manifest["dim"] != encoder.dim:
        raise ExporterError(
            f"dataset dim {manifest['dim']} != encoder dim {encoder.dim}")
    for index, name in enumerate(class_names):
        if not name.strip():
            raise EmptyText(f"class {index} has an empty name")
        g_tokens, g_summary = encoder.encode_text(
            GLOBAL_PROMPT_TEMPLATE.format(name=name.replace("_", " ")))
        subs = []
        for text in subtexts_per_class.get(name, ()):
            if not str(text).strip():
                raise EmptyText(f"class {name!r} has an empty sub-text")
            subs.append(encoder.encode_text(str(text)))
        store_format.upsert_class(manifest, out_root, index, name,
                                  g_tokens, g_summary, subs)
    store_format.save_manifest(out_root, manifest)
    if candidates:
        per_class_groups = []
        for name in class_names:
            groups = []
            for group in candidates.get(name, ()):
                groups.append([encoder.encode_text(str(t)) for t in group])
            per_class_groups.append(groups)
        store_format.save_candidates(out_root / "candidates", encoder.dim,
                                     per_class_groups)


def export_video_embeddings(job: ExportJob, encoder) -> None:
    """Sample frames uniformly, encode them, and upsert the video entries."""
    out_root = Path(job.out_root)
    manifest = store_format.load_manifest(out_root) or store_format.empty_manifest(encoder.dim)
    if manifest["dim"] != encoder.dim:
        raise ExporterError(
            f"dataset dim {manifest['dim']} != encoder dim {encoder.dim}")
    for entry in job.videos:
        path = Path(entry["path"])
        frames = sample_frames(path, job.frames)
        matrix = np.stack([encoder.encode_frame(f) for f in frames])
        video_id = str(entry.get("id") or path.stem)
        labels = entry.get("labels", entry.get("label"))
        if labels is None:
            raise ExporterError(f"{path}: video entry needs a label")
        if isinstance(labels, int):
            labels = [labels]
        store_format.upsert_video(manifest, out_root, video_id, matrix,
                                  sorted(int(x) for x in labels))
    store_format.save_manifest(out_root, manifest)
    log = {"encoder": encoder.name, "deterministic": bool(encoder.deterministic),
           "frames_per_video": job.frames}
    (out_root / "export_log.json").write_text(
        json.dumps(log, indent=2, sort_keys=True) + "\n")
