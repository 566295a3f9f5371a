"""Command-line entry point.

One executable with subcommands: gen-data, train, eval, export-emb, ablate,
plot. Every option can also come from a JSON config file (--config); explicit
flags win over the file, the file wins over defaults, and the resolved
configuration is echoed next to each command's outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import METHODS, GeneratorConfig, generate_corpus, load_manifest
from .evaluation import FEATURE_KINDS, evaluate, export_embeddings, run_ablation_matrix
from .losses import LossWeights
from .nets import ABLATIONS, ModelConfig
from .seeding import configure_torch
from .training import TrainConfig, run_training


class UsageError(Exception):
    """Bad flags or config values; maps to exit code 2."""


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


def resolve_config(file_path: str | None, flag_overrides: dict, defaults: dict,
                   allowed: set[str] | None = None) -> dict:
    """Merge defaults <- config file <- explicit flags (None = not given)."""
    merged = dict(defaults)
    file_values = _load_config_file(file_path)
    allowed = allowed or set(defaults)
    for key, value in file_values.items():
        if key not in allowed:
            raise UsageError(f"unknown config key {key!r} in {file_path}")
        merged[key] = value
    for key, value in flag_overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _echo_config(config: dict, out: Path) -> None:
    """Write the resolved config into the run directory (or next to a file)."""
    target = out / "config.json" if out.suffix == "" else out.with_name(out.name + ".config.json")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(config, indent=2, sort_keys=True), encoding="utf-8")


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON file with option defaults")


TRAIN_DEFAULTS = {
    "lr": 1e-4, "batch": 8, "steps": 3000, "seed": 0, "ablation": "full",
    "checkpoint_every": 1000, "lambda1": 5.0, "lambda2": 0.1, "lambda3": 0.5,
    "lambda4": 0.5, "d": 64, "encoder_depth": 4, "decoder_depth": 3,
    "classifier_hidden": 128, "freeze_encoder": False, "model_seed": None,
}


def _train_config_from(merged: dict, image_size: int) -> TrainConfig:
    if merged["lr"] <= 0:
        raise UsageError("lr must be > 0")
    if merged["ablation"] not in ABLATIONS:
        raise UsageError(f"ablation must be one of {ABLATIONS}")
    weights = LossWeights(lambda1=merged["lambda1"], lambda2=merged["lambda2"],
                          lambda3=merged["lambda3"], lambda4=merged["lambda4"])
    for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
        if merged[name] < 0:
            raise UsageError(f"{name} must be >= 0")
    model_seed = merged["model_seed"]
    model = ModelConfig(d=merged["d"], encoder_depth=merged["encoder_depth"],
                        decoder_depth=merged["decoder_depth"], image_size=image_size,
                        classifier_hidden=merged["classifier_hidden"],
                        seed=merged["seed"] if model_seed is None else model_seed,
                        freeze_encoder=merged["freeze_encoder"])
    return TrainConfig(lr=merged["lr"], batch_size=merged["batch"], steps=merged["steps"],
                       seed=merged["seed"], weights=weights, ablation=merged["ablation"],
                       checkpoint_every=merged["checkpoint_every"], model=model)


def _cmd_gen_data(args) -> int:
    defaults = {"seed": 0, "identities": 8, "holdout": "warp_lowfreq",
                "frames_per_group": 4, "groups": 60, "image_size": 64,
                "methods": list(METHODS)}
    merged = resolve_config(args.config, {
        "seed": args.seed, "identities": args.identities, "holdout": args.holdout,
        "frames_per_group": args.frames_per_group, "groups": args.groups,
        "image_size": args.image_size,
        "methods": args.methods.split(",") if args.methods else None,
    }, defaults)
    cfg = GeneratorConfig(out_dir=Path(args.out), seed=merged["seed"],
                          identities=merged["identities"], methods=tuple(merged["methods"]),
                          holdout=merged["holdout"], frames_per_group=merged["frames_per_group"],
                          groups=merged["groups"], image_size=merged["image_size"])
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = generate_corpus(cfg)
    _echo_config(merged, Path(args.out))
    print(f"wrote {len(manifest.records)} images and manifest.json to {args.out}")
    return 0


def _cmd_train(args) -> int:
    flag_overrides = {
        "lr": args.lr, "batch": args.batch, "steps": args.steps, "seed": args.seed,
        "ablation": args.ablation, "checkpoint_every": args.checkpoint_every,
        "lambda1": args.lambda1, "lambda2": args.lambda2, "lambda3": args.lambda3,
        "lambda4": args.lambda4, "d": args.d, "model_seed": args.model_seed,
    }
    merged = resolve_config(args.config, flag_overrides, TRAIN_DEFAULTS)
    manifest = load_manifest(Path(args.data))
    config = _train_config_from(merged, manifest.image_size)
    out = Path(args.out)
    state = run_training(manifest, config, out)
    _echo_config({**merged, "data": str(args.data), "out": str(args.out)}, out)
    last = state.loss_history[-1] if state.loss_history else {}
    print(f"trained {state.step} steps; final total loss {last.get('total', float('nan')):.4f}; "
          f"checkpoint ckpt-{state.step}")
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(Path(args.data))
    splits = tuple(args.splits.split(",")) if args.splits else None
    report = evaluate(Path(args.ckpt), manifest, splits=splits)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    _echo_config({"ckpt": str(args.ckpt), "data": str(args.data),
                  "splits": list(splits) if splits else sorted(manifest.splits)}, out)
    for split, metrics in report.splits.items():
        print(f"{split}: frame_auc={metrics['frame_auc']:.4f} video_auc={metrics['video_auc']:.4f} "
              f"({metrics['n_frames']} frames, {metrics['n_groups']} groups)")
    return 0


def _cmd_export_emb(args) -> int:
    manifest = load_manifest(Path(args.data))
    kinds = tuple(args.kinds.split(","))
    out = export_embeddings(Path(args.ckpt), manifest, args.split, kinds, Path(args.out))
    _echo_config({"ckpt": str(args.ckpt), "data": str(args.data), "split": args.split,
                  "kinds": list(kinds)}, out)
    print(f"wrote embeddings for {len(kinds)} kinds to {out}")
    return 0


def _cmd_ablate(args) -> int:
    merged = resolve_config(args.config, {
        "steps": args.steps, "lr": args.lr, "batch": args.batch, "d": args.d,
    }, {**TRAIN_DEFAULTS, "steps": 1500})
    manifest = load_manifest(Path(args.data))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    base = _train_config_from(merged, manifest.image_size)
    result = run_ablation_matrix(manifest, seeds, merged["steps"], Path(args.out).parent
                                 if Path(args.out).suffix else Path(args.out),
                                 base_config=base)
    table_path = Path(args.out) if Path(args.out).suffix else Path(args.out) / "ablation.csv"
    result.write_csv(table_path)
    _echo_config({**merged, "seeds": list(seeds), "data": str(args.data)}, table_path)
    for row in result.rows():
        print(f"{row['variant']:8s} test_in={row['test_in_mean']:.4f}±{row['test_in_std']:.4f} "
              f"test_cross={row['test_cross_mean']:.4f}±{row['test_cross_std']:.4f}")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    with open(args.emb, newline="", encoding="utf-8") as fh:
        import csv as _csv
        reader = _csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise UsageError(f"no rows in {args.emb}")
    vecs = np.array([[float(v) for v in r[4:]] for r in rows])
    kinds = [r[3] for r in rows]
    labels = [r[1] for r in rows]
    # deterministic 2-D projection: PCA via SVD on centered vectors
    centered = vecs - vecs.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    fig, ax = plt.subplots(figsize=(7, 6))
    for kind in sorted(set(kinds)):
        for label, marker in (("real", "o"), ("fake", "x")):
            sel = [i for i, (k, l) in enumerate(zip(kinds, labels)) if k == kind and l == label]
            if sel:
                ax.scatter(proj[sel, 0], proj[sel, 1], s=12, marker=marker,
                           label=f"{kind}/{label}", alpha=0.7)
    ax.legend(fontsize=7)
    ax.set_title("pooled feature projection")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=140, bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disentaforge",
                                     description="blended-identity disentanglement deepfake detector")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic forgery corpus")
    _add_config_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--identities", type=int, default=None)
    p.add_argument("--holdout", choices=METHODS, default=None)
    p.add_argument("--frames-per-group", dest="frames_per_group", type=int, default=None)
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--methods", default=None, help="comma list, default all four")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    _add_config_flag(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=ABLATIONS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.add_argument("--lambda4", type=float, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--model-seed", dest="model_seed", type=int, default=None)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on corpus splits")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default=None, help="comma list; default all")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-emb", help="export pooled feature vectors as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test_in")
    p.add_argument("--kinds", default=",".join(FEATURE_KINDS))
    p.set_defaults(func=_cmd_export_emb)

    p = sub.add_parser("ablate", help="run the efn/pd/pd_iacc/full matrix over seeds")
    _add_config_flag(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("plot", help="project an embedding CSV to 2-D and plot")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    configure_torch()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (ValueError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if not str(exc).startswith("invalid-argument") else 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort one-line report
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
