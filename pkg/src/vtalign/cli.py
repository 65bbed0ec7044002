"""Command-line entry point wiring the library into reproducible pipelines.

All randomness derives from --seed; reruns with identical inputs and seeds
produce byte-identical outputs regardless of --threads.  A --config JSON
file, when given, overrides any training flags.  The default dataset root
comes from --data or the VTALIGN_DATA_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, pipeline, store, subtext, synthetic, training
from .errors import ConfigError, VtalignError

ENV_DATA_ROOT = "VTALIGN_DATA_ROOT"


def _data_root(args) -> Path:
    if args.data:
        return Path(args.data)
    env = os.environ.get(ENV_DATA_ROOT)
    if env:
        return Path(env)
    raise ConfigError(f"no dataset given: pass --data or set {ENV_DATA_ROOT}")


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


TRAIN_FLAGS = ("epochs", "batch_size", "lr", "warmup_epochs", "schedule",
               "weight_decay", "lam", "tau", "seed", "variant", "literal_eq8",
               "hidden", "activation")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON training config; overrides flags")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    p.add_argument("--schedule", choices=("cosine", "constant"))
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--variant", choices=pipeline.VARIANTS)
    p.add_argument("--literal-eq8", dest="literal_eq8", action="store_const", const=True,
                   help="use the unnormalized coarse-weight form")
    p.add_argument("--hidden", type=int, help="optional hidden width of the fusion heads")
    p.add_argument("--activation", choices=pipeline.ACTIVATIONS)


def _train_config(args) -> training.TrainConfig:
    overrides = {}
    for name in TRAIN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    cfg = training.TrainConfig().merged(overrides)
    if getattr(args, "config", None):
        cfg = cfg.merged(json.loads(Path(args.config).read_text()))
    return cfg


def _synth_config(args) -> synthetic.SyntheticConfig:
    return synthetic.SyntheticConfig(
        classes=args.classes, atomics=args.atomics, rho=args.rho,
        frames=args.frames, dim=args.dim, videos_per_class=args.videos_per_class,
        noise=args.noise, concentration=args.concentration,
        subtext_tokens=args.subtext_tokens, global_tokens=args.global_tokens,
        background_segments=args.background_segments,
        background_scale=args.background_scale,
        name_prefix=args.name_prefix, seed=args.seed,
    )


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_validate(args) -> int:
    root = _data_root(args)
    ds = None
    try:
        ds = store.load_dataset(root)
    except VtalignError as exc:
        sys.stderr.write(f"vtalign: store.{type(exc).__name__}: {exc}\n")
        return 1
    report = store.validate(ds)
    if report.ok:
        print(f"ok: {len(ds.videos)} videos, {len(ds.classes)} classes, dim={ds.dim}")
        return 0
    for issue in report.issues:
        print(issue)
    return 1


def _cmd_gen_synth(args) -> int:
    cfg = _synth_config(args)
    ds = synthetic.generate_synthetic(cfg)
    store.save_dataset(ds, args.out)
    if args.candidate_groups > 0:
        cands = synthetic.generate_candidate_groups(cfg, args.candidate_groups)
        store.save_candidates(cands, cfg.dim, Path(args.out) / "candidates")
    print(f"wrote {len(ds.videos)} videos, {len(ds.classes)} classes to {args.out}")
    return 0


def _cmd_select_subtexts(args) -> int:
    root = _data_root(args)
    ds = store.load_dataset(root)
    cand_root = Path(args.candidates) if args.candidates else root / "candidates"
    dim, candidates = store.load_candidates(cand_root)
    if dim != ds.dim:
        raise ConfigError(f"candidate dim {dim} != dataset dim {ds.dim}")
    cfg = subtext.TppConfig(alpha=args.alpha, beta=args.beta, epsilon=args.epsilon)
    result = {"classes": []}
    for cand in candidates:
        bundle = ds.classes[cand.class_index]
        sel = subtext.select_subtext_set(cand, bundle.global_text, cfg)
        chosen = sel.breakdowns[sel.chosen]
        result["classes"].append({
            "class_index": cand.class_index,
            "class_name": bundle.class_name,
            "chosen_group": sel.chosen,
            "tpp_per_group": [b.tpp for b in sel.breakdowns],
            "chosen_sigma": chosen.sigma.tolist(),
            "chosen_delta": chosen.delta.tolist(),
        })
    _write_or_print(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _cmd_train(args) -> int:
    ds = store.load_dataset(_data_root(args))
    cfg = _train_config(args)
    result = training.train(ds, cfg)
    out = Path(args.out)
    training.save_params(result.params, out, trained_on=result.trained_on)
    (out / "history.csv").write_text(training.history_csv(result.history))
    final = result.history[-1] if result.history else None
    if final:
        print(f"trained {cfg.epochs} epochs: loss={final.total:.6g} "
              f"train_top1={final.train_top1:.4f}")
    else:
        print("trained 0 epochs")
    return 0


def _load_or_init_params(args, ds) -> tuple[pipeline.ModelParams, tuple[str, ...]]:
    if args.params:
        return training.load_params(args.params)
    return (pipeline.init_params(ds.dim, seed=args.init_seed), ())


def _cmd_eval(args) -> int:
    ds = store.load_dataset(_data_root(args))
    params, _ = _load_or_init_params(args, ds)
    report = evaluation.evaluate(ds, params, args.variant or "full",
                                 bool(args.literal_eq8), threads=args.threads)
    _write_or_print(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                    args.out)
    if args.profiles:
        lines = ["video_id,class_name,frame,coarse,fine"]
        for v in ds.videos:
            for bundle in ds.classes:
                _, prof = pipeline.video_embedding(v, bundle, params,
                                                   args.variant or "full",
                                                   bool(args.literal_eq8))
                for l in range(v.num_frames):
                    lines.append(f"{v.video_id},{bundle.class_name},{l},"
                                 f"{prof.coarse[l]:.17g},{prof.fine[l]:.17g}")
        Path(args.profiles).write_text("\n".join(lines) + "\n")
    return 0


def _cmd_ablate(args) -> int:
    ds = store.load_dataset(_data_root(args))
    cfg = _train_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    table = evaluation.ablation_suite(ds, cfg, seeds, args.eval_fraction)
    _write_or_print(table.to_csv(), args.out)
    return 0


def _cmd_zero_shot(args) -> int:
    train_ds = store.load_dataset(_data_root(args))
    eval_ds = store.load_dataset(args.eval_data)
    cfg = _train_config(args)
    result = training.train(train_ds, cfg)
    report = evaluation.zero_shot_eval(result.params, result.trained_on, eval_ds,
                                       cfg.variant, cfg.literal_eq8,
                                       threads=args.threads)
    baseline = evaluation.evaluate(eval_ds, result.params, "baseline",
                                   threads=args.threads)
    payload = {"zero_shot": report.to_dict(), "mean_pool_baseline": baseline.to_dict()}
    _write_or_print(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _cmd_few_shot(args) -> int:
    ds = store.load_dataset(_data_root(args))
    cfg = _train_config(args)
    train_ds, eval_ds = evaluation.few_shot_split(ds, args.shots, cfg.seed)
    result = training.train(train_ds, cfg)
    report = evaluation.evaluate(eval_ds, result.params, cfg.variant,
                                 cfg.literal_eq8, threads=args.threads)
    payload = {"shots": args.shots, "train_videos": len(train_ds.videos),
               "eval": report.to_dict()}
    _write_or_print(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _cmd_tpp_study(args) -> int:
    root = _data_root(args)
    ds = store.load_dataset(root)
    cand_root = Path(args.candidates) if args.candidates else root / "candidates"
    dim, candidates = store.load_candidates(cand_root)
    if dim != ds.dim:
        raise ConfigError(f"candidate dim {dim} != dataset dim {ds.dim}")
    cfg = _train_config(args)
    tpp_cfg = subtext.TppConfig(alpha=args.alpha, beta=args.beta, epsilon=args.epsilon)
    result = evaluation.tpp_correlation_study(ds, candidates, cfg, tpp_cfg,
                                              args.eval_fraction)
    _write_or_print(result.to_csv(), args.out)
    if result.degenerate:
        print("pearson_r=degenerate (zero variance)")
    else:
        print(f"pearson_r={result.pearson_r:.6g}")
    return 0


def _cmd_grad_check(args) -> int:
    if args.data:
        ds = store.load_dataset(_data_root(args))
    else:
        # bundled fixture: a small planted world at the reference dimensions
        ds = synthetic.generate_synthetic(synthetic.SyntheticConfig(
            classes=3, atomics=3, frames=6, dim=16, videos_per_class=2,
            rho=0.0, noise=0.3, seed=args.seed))
    rng = np.random.default_rng(args.seed)
    pick = rng.choice(len(ds.videos), size=min(4, len(ds.videos)), replace=False)
    batch = training.Batch.from_videos([ds.videos[i] for i in sorted(pick)])
    params = pipeline.init_params(ds.dim, seed=args.seed)
    err = training.grad_check(batch, ds.classes, params, h=args.h,
                              n_coords=args.coords, seed=args.seed,
                              variant=args.variant or "full")
    print(f"max_relative_error={err:.6g} tolerance={args.tol:g}")
    return 0 if err < args.tol else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtalign",
        description="Multi-granularity video-text alignment over precomputed embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--data", help=f"dataset root (default ${ENV_DATA_ROOT})")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("--data")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("gen-synth", help="generate a planted synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--atomics", type=int, default=4)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--videos-per-class", dest="videos_per_class", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--concentration", type=float, default=0.5)
    p.add_argument("--subtext-tokens", dest="subtext_tokens", type=int, default=3)
    p.add_argument("--global-tokens", dest="global_tokens", type=int, default=4)
    p.add_argument("--background-segments", dest="background_segments", type=int, default=2)
    p.add_argument("--background-scale", dest="background_scale", type=float, default=2.5)
    p.add_argument("--name-prefix", dest="name_prefix", default="class")
    p.add_argument("--candidate-groups", dest="candidate_groups", type=int, default=0)
    p.set_defaults(fn=_cmd_gen_synth)

    p = sub.add_parser("select-subtexts", help="pick the best sub-text set per class")
    common(p)
    p.add_argument("--candidates", help="candidates dir (default <data>/candidates)")
    p.add_argument("--alpha", default="identity")
    p.add_argument("--beta", default="identity")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.set_defaults(fn=_cmd_select_subtexts)

    p = sub.add_parser("train", help="train the learnable parameters")
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="directory for params + history.csv")
    _add_train_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate parameters on a dataset")
    common(p)
    p.add_argument("--params", help="trained params dir (default: fresh init)")
    p.add_argument("--init-seed", dest="init_seed", type=int, default=0)
    p.add_argument("--variant", choices=pipeline.VARIANTS)
    p.add_argument("--literal-eq8", dest="literal_eq8", action="store_const", const=True)
    p.add_argument("--profiles", help="write per-(video, class) importance CSV here")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the aggregation-variant ablation")
    common(p)
    _add_train_flags(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float, default=0.4)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("zero-shot", help="train on one class set, evaluate on a disjoint one")
    common(p)
    _add_train_flags(p)
    p.add_argument("--eval-data", dest="eval_data", required=True)
    p.set_defaults(fn=_cmd_zero_shot)

    p = sub.add_parser("few-shot", help="train on a few examples per class")
    common(p)
    _add_train_flags(p)
    p.add_argument("--shots", type=int, default=2)
    # the few-shot protocol trains briefly; flags or a config file override
    p.set_defaults(fn=_cmd_few_shot, epochs=2)

    p = sub.add_parser("tpp-study", help="sub-text quality vs accuracy correlation")
    common(p)
    _add_train_flags(p)
    p.add_argument("--candidates")
    p.add_argument("--alpha", default="identity")
    p.add_argument("--beta", default="identity")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float, default=0.4)
    p.set_defaults(fn=_cmd_tpp_study)

    p = sub.add_parser("grad-check", help="verify gradients against finite differences")
    p.add_argument("--data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--variant", choices=pipeline.VARIANTS)
    p.set_defaults(fn=_cmd_grad_check)

    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VtalignError as exc:
        sys.stderr.write(f"vtalign: {exc.module}.{type(exc).__name__}: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run())
