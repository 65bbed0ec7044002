"""Writer for the vtalign embedding-store format.

This file is the exporter's half of the on-disk contract: a manifest.json
plus raw ``.f32`` tensors (little-endian IEEE-754 binary32, row-major, byte
length = rows * cols * 4).  Key names mirror the consumer's documentation;
the two sides share only this format, never code.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
CANDIDATES_NAME = "candidates.json"
STORE_FORMAT = "vtalign-embedding-store"
CANDIDATES_FORMAT = "vtalign-subtext-candidates"


def write_tensor(path: Path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
    if a.ndim == 1:
        a = a.reshape(1, -1)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(a.astype("<f4").tobytes(order="C"))


def empty_manifest(dim: int) -> dict:
    return {"format": STORE_FORMAT, "version": 1, "dim": int(dim),
            "videos": [], "classes": []}


def load_manifest(root: Path) -> dict | None:
    path = root / MANIFEST_NAME
    if not path.is_file():
        return None
    return json.loads(path.read_text())


def save_manifest(root: Path, manifest: dict) -> None:
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def text_entry(root: Path, prefix: str, tokens: np.ndarray,
               summary: np.ndarray) -> dict:
    tokens_rel = f"tensors/{prefix}_tokens.f32"
    summary_rel = f"tensors/{prefix}_summary.f32"
    write_tensor(root / tokens_rel, tokens)
    write_tensor(root / summary_rel, summary.reshape(1, -1))
    return {"tokens": int(tokens.shape[0]), "tokens_tensor": tokens_rel,
            "summary_tensor": summary_rel}


def upsert_video(manifest: dict, root: Path, video_id: str, frames: np.ndarray,
                 labels: list[int]) -> None:
    """Append a video entry, replacing any previous entry with the same id
    (re-export is idempotent, never corrupting)."""
    rel = f"tensors/video_{video_id}.f32"
    write_tensor(root / rel, frames)
    entry = {"id": video_id, "frames": int(frames.shape[0]),
             "labels": [int(x) for x in labels], "tensor": rel}
    manifest["videos"] = [v for v in manifest["videos"] if v["id"] != video_id]
    manifest["videos"].append(entry)
    manifest["videos"].sort(key=lambda v: v["id"])


def upsert_class(manifest: dict, root: Path, index: int, name: str,
                 global_tokens: np.ndarray, global_summary: np.ndarray,
                 subtexts: list[tuple[np.ndarray, np.ndarray]]) -> None:
    entry = {
        "name": name,
        "global": text_entry(root, f"class{index}_global", global_tokens,
                             global_summary),
        "subtexts": [
            text_entry(root, f"class{index}_sub{si}", tok, summ)
            for si, (tok, summ) in enumerate(subtexts)
        ],
    }
    classes = manifest["classes"]
    while len(classes) <= index:
        classes.append(None)
    classes[index] = entry


def save_candidates(root: Path, dim: int,
                    per_class_groups: list[list[list[tuple[np.ndarray, np.ndarray]]]]) -> None:
    """Candidate sub-text sets: per class, a list of groups of (tokens, summary)."""
    classes_meta = []
    for ci, groups in enumerate(per_class_groups):
        groups_meta = []
        for gi, group in enumerate(groups):
            groups_meta.append([
                text_entry(root, f"cand{ci}_g{gi}_s{si}", tok, summ)
                for si, (tok, summ) in enumerate(group)
            ])
        classes_meta.append({"class_index": ci, "groups": groups_meta})
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"format": CANDIDATES_FORMAT, "version": 1, "dim": int(dim),
                "classes": classes_meta}
    (root / CANDIDATES_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
