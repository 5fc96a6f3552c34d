"""Command line: train on corpora, run inference, evaluate a checkpoint."""

from __future__ import annotations

import argparse
import sys

from .infer import infer_to_cbx
from .model import ConfigError, ModelConfig
from .train import (evaluate, load_checkpoint, load_dir_samples,
                    load_manifest_samples, train)


def _config_from_args(args):
    return ModelConfig(d0=args.d0, K=args.diffusion_steps, alpha=args.alpha,
                       beta=args.beta, n_head=args.heads,
                       d_head=args.head_dim, p_rate=args.p_rate,
                       depth=args.depth, n_c=args.n_c,
                       dist_squared=args.dist_squared, lr=args.lr,
                       epochs=args.epochs, seed=args.seed)


def _add_model_args(p):
    p.add_argument("--d0", type=int, default=64)
    p.add_argument("--diffusion-steps", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--p-rate", type=float, default=0.5)
    p.add_argument("--depth", type=int, default=3,
                   help="U-Net levels (ablation hook: 2, 3, or 4)")
    p.add_argument("--n-c", type=int, default=8)
    p.add_argument("--dist-squared", action="store_true",
                   help="train on Dist^2 instead of Dist")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coarsenet",
        description="graph U-Net surrogate for local coarse bases")
    sub = parser.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("train")
    pt.add_argument("--corpus", action="append", required=True,
                    help="corpus dir with manifest.json (repeatable)")
    pt.add_argument("--extra-train", action="append", default=[],
                    help="flat .sgb dir treated as extra training data")
    pt.add_argument("--out", required=True)
    pt.add_argument("--batch-size", type=int, default=4,
                    help="graphs per optimizer step (gradient accumulation)")
    _add_model_args(pt)

    pi = sub.add_parser("infer")
    pi.add_argument("--checkpoint", required=True)
    pi.add_argument("--sgb-dir", required=True)
    pi.add_argument("--out-dir", required=True)

    pe = sub.add_parser("eval")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--corpus", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = _config_from_args(args)
            samples = []
            for c in args.corpus:
                samples.extend(load_manifest_samples(c, config))
            for d in args.extra_train:
                samples.extend(load_dir_samples(d, config))
            _, report = train(samples, config, args.out,
                              batch_size=args.batch_size)
            print(f"best val {report.best_val:.6f} "
                  f"at epoch {report.best_epoch}")
            return 0
        if args.command == "infer":
            written = infer_to_cbx(args.checkpoint, args.sgb_dir,
                                   args.out_dir)
            print(f"wrote {len(written)} bases to {args.out_dir}")
            return 0
        if args.command == "eval":
            model, config = load_checkpoint(args.checkpoint)
            samples = load_manifest_samples(args.corpus, config)
            val = [s for s in samples if s.split == "val"] or samples
            print(f"val loss {evaluate(model, val, config):.6f} "
                  f"over {len(val)} records")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
