"""Command-line interface for the exporter."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .encoders import make_encoder
from .errors import ExporterError
from .export import ExportJob, export_text_embeddings, export_video_embeddings
from .subtexts import DEFAULT_TEMPLATE, generate_subtexts


def _cmd_gen_subtexts(args) -> int:
    template = DEFAULT_TEMPLATE
    if args.template:
        template = Path(args.template).read_text()
    names = [n.strip() for n in args.classes.split(",") if n.strip()]
    result = generate_subtexts(names, endpoint=args.endpoint, n=args.n,
                               groups=args.groups, template=template,
                               cache_dir=args.cache_dir)
    Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(f"wrote sub-texts for {len(names)} classes to {args.out}")
    return 0


def _cmd_export_texts(args) -> int:
    encoder = make_encoder(args.encoder)
    groups = json.loads(Path(args.subtexts).read_text())
    names = list(groups.keys())
    chosen = {name: groups[name][args.group] for name in names}
    candidates = groups if args.with_candidates else None
    export_text_embeddings(names, chosen, encoder, args.out, candidates=candidates)
    print(f"exported {len(names)} class bundles to {args.out}")
    return 0


def _cmd_export_videos(args) -> int:
    encoder = make_encoder(args.encoder)
    job = ExportJob.from_file(args.job, args.encoder, args.out)
    export_video_embeddings(job, encoder)
    print(f"exported {len(job.videos)} videos to {args.out}")
    return 0


def _cmd_demo_export(args) -> int:
    """End-to-end miniature export: two classes, two videos, mock everything."""
    out = Path(args.out)
    encoder = make_encoder(args.encoder)
    names = ["baking_cookies", "swinging_legs"]
    subtexts = generate_subtexts(names, endpoint="mock:", n=4, groups=1,
                                 cache_dir=out / "subtext_cache")
    chosen = {name: subtexts[name][0] for name in names}
    export_text_embeddings(names, chosen, encoder, out)

    videos_dir = out / "source_videos"
    videos_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    entries = []
    for i, name in enumerate(names):
        stack = rng.integers(0, 256, size=(12, 8, 8, 3), dtype=np.uint8)
        path = videos_dir / f"demo_{name}.npy"
        np.save(path, stack)
        entries.append({"path": str(path), "id": f"demo_{i}", "labels": [i]})
    job = ExportJob(out_root=out, encoder_spec=args.encoder, frames=args.frames,
                    videos=tuple(entries))
    export_video_embeddings(job, encoder)
    print(f"demo dataset at {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtalign-export",
        description="Export encoder embeddings and LLM sub-texts into a vtalign store",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-subtexts", help="generate candidate sub-texts via an LLM endpoint")
    p.add_argument("--classes", required=True, help="comma-separated class names")
    p.add_argument("--endpoint", default="mock:",
                   help="LLM endpoint URL, or mock: for offline generation")
    p.add_argument("--n", type=int, default=4, help="sub-texts per set")
    p.add_argument("--groups", type=int, default=1, help="candidate sets per class")
    p.add_argument("--template", help="prompt template file ({name}, {n} placeholders)")
    p.add_argument("--cache-dir", dest="cache_dir", default="subtext_cache")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_subtexts)

    p = sub.add_parser("export-texts", help="encode class texts into a dataset")
    p.add_argument("--subtexts", required=True, help="JSON from gen-subtexts")
    p.add_argument("--encoder", default="mock:16")
    p.add_argument("--group", type=int, default=0, help="candidate group to install")
    p.add_argument("--with-candidates", dest="with_candidates", action="store_true",
                   help="also write all groups as a candidates store")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export_texts)

    p = sub.add_parser("export-videos", help="encode sampled video frames into a dataset")
    p.add_argument("--job", required=True,
                   help="JSON job spec: {frames, videos: [{path, id, labels}]}")
    p.add_argument("--encoder", default="mock:16")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export_videos)

    p = sub.add_parser("demo-export", help="two-class, two-video offline export")
    p.add_argument("--encoder", default="mock:16")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_demo_export)

    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ExporterError as exc:
        sys.stderr.write(f"vtalign-export: {type(exc).__name__}: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run())
