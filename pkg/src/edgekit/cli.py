"""Command-line interface: synth | train | predict | eval | gradcheck | params.

Configuration files are INI-style ``key = value`` sections (backbone,
loss, train, eval); unknown sections or keys are rejected, and CLI flags
override file values. Exit codes: 0 success, 1 operational failure,
2 usage error. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys


__all__ = ["main"]

_SECTION_KEYS = {
    "backbone": {"preset", "c_mid"},
    "loss": {"kind", "lambda", "gamma_focal", "mu", "gamma_gt"},
    "train": {"lr", "momentum", "weight_decay", "epochs", "seed", "batch"},
    "eval": {"tol"},
}


def load_config(path: str) -> dict:
    """Parse and validate a sectioned key = value config file."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path!r}")
    values: dict = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in _SECTION_KEYS[section]:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            values[f"{section}.{key}"] = value
    return values


def _model_config(cfg: dict):
    from edgekit.model import ModelConfig

    preset = cfg.get("backbone.preset", "tiny")
    c_mid = int(cfg.get("backbone.c_mid", 16))
    return ModelConfig.from_preset(preset, c_mid=c_mid)


def _loss_config(cfg: dict):
    from edgekit.losses import LossConfig

    return LossConfig(
        kind=cfg.get("loss.kind", "dfl"),
        lam=float(cfg.get("loss.lambda", 1.1)),
        gamma_focal=float(cfg.get("loss.gamma_focal", 1.0)),
        mu=float(cfg.get("loss.mu", 0.5)),
        gamma_gt=float(cfg.get("loss.gamma_gt", 0.3)),
    )


def cmd_synth(args) -> int:
    from edgekit.data import synth_dataset, write_dataset

    samples = synth_dataset(args.seed, args.count, args.size)
    manifest = write_dataset(samples, args.out)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from edgekit.data import load_samples
    from edgekit.model import EdgeNet
    from edgekit.train import TrainConfig, train

    cfg = load_config(args.config) if args.config else {}
    tc = TrainConfig(
        lr=args.lr if args.lr is not None else float(cfg.get("train.lr", 1e-3)),
        momentum=float(cfg.get("train.momentum", 0.9)),
        weight_decay=float(cfg.get("train.weight_decay", 2e-4)),
        epochs=args.epochs if args.epochs is not None else int(cfg.get("train.epochs", 1)),
        loss=_loss_config(cfg),
        seed=args.seed if args.seed is not None else int(cfg.get("train.seed", 0)),
        batch=int(cfg.get("train.batch", 1)),
    )
    samples = load_samples(args.data)
    model = EdgeNet(_model_config(cfg), seed=tc.seed)
    result = train(model, samples, tc, args.out)
    print(f"final={result.final_path}")
    print(f"best={result.best_path}")
    print(f"log={result.log_path}")
    return 0


def cmd_predict(args) -> int:
    from edgekit.data import load_image, write_edge_map
    from edgekit.model import load_checkpoint
    from edgekit.tensor import Tensor

    model = load_checkpoint(args.ckpt)
    image = load_image(args.image)
    pred = model.forward(Tensor(image[None]))
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    fused_path = os.path.join(args.out, f"{stem}.pgm")
    write_edge_map(pred.fused_prob.data[0, 0], fused_path)
    for i, side in enumerate(pred.side_probs, start=1):
        write_edge_map(side.data[0, 0], os.path.join(args.out, f"{stem}_side{i}.pgm"))
    print(fused_path)
    return 0


def cmd_eval(args) -> int:
    from edgekit.bench import evaluate_dataset, write_pr_csv
    from edgekit.data import load_image, load_manifest, read_edge_map

    entries = load_manifest(args.gt)
    preds, gts, ids = [], [], []
    for img_path, gt_paths in entries:
        stem = os.path.splitext(os.path.basename(img_path))[0]
        pred_path = os.path.join(args.pred, f"{stem}.pgm")
        if not os.path.exists(pred_path):
            raise FileNotFoundError(f"prediction not found: {pred_path!r}")
        preds.append(read_edge_map(pred_path))
        maps = []
        for p in gt_paths:
            maps.append(read_edge_map(p) if p.lower().endswith((".pgm", ".pnm")) else load_image(p)[0])
        gts.append(maps)
        ids.append(stem)
    result, tables = evaluate_dataset(preds, gts, tol_frac=args.tol)
    csv_path = args.csv or os.path.join(args.pred, "pr.csv")
    write_pr_csv(csv_path, ids, tables, result)
    print(f"ODS={result.ods_f:.4f} OIS={result.ois_f:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from edgekit.gradsuite import run_gradient_suite

    worst = run_gradient_suite(full=args.full, out=sys.stdout)
    if worst >= 1e-4:
        print(f"gradient check FAILED (max relative error {worst:.3e})", file=sys.stderr)
        return 1
    return 0


def cmd_params(args) -> int:
    from edgekit.model import EdgeNet

    cfg = load_config(args.config) if args.config else {}
    model = EdgeNet(_model_config(cfg), seed=0)
    counts = model.count_params()
    print(f"total={counts['total']}")
    print(f"non_backbone={counts['non_backbone']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic edge dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write fused + side edge maps for an image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    p.add_argument("--pred", required=True, help="directory of <id>.pgm maps")
    p.add_argument("--gt", required=True, help="manifest path")
    p.add_argument("--tol", type=float, default=0.0075, help="tolerance as diagonal fraction")
    p.add_argument("--csv", help="PR table output path (default: <pred>/pr.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--full", action="store_true", help="include the composed-network check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="print parameter counts for a config")
    p.add_argument("--config")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
