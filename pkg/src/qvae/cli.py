"""Command-line entry point: ``qvae {train,reconstruct,generate,stats,params}``.

Exit codes: 0 success, 2 usage, 3 input/IO failure, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import CheckpointError, Divergence, QvaeError
from .layers import LayerKind, count_parameters, count_weights
from .model import QvaeConfig, model_specs
from .training import TrainConfig, evaluate_reconstruction, load_model, train

log = logging.getLogger("qvae")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3, 4

PUBLISHED_TOTALS = {"vae": 3_762_539, "qvae": 1_404_996}


class InputFailure(Exception):
    """Raised for anything that maps to exit code 3."""


def _channels(text: str) -> tuple:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid channel list {text!r}")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"invalid channel list {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qvae", description="Quaternion variational autoencoder toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", help="train a QVAE or the real baseline VAE",
                       description="Train a model; writes checkpoints and metrics.csv under --out.")
    t.add_argument("--data", help="directory of training images (required)")
    t.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    t.add_argument("--model", choices=["qvae", "vae"], default="qvae", help="model kind (default qvae)")
    t.add_argument("--epochs", type=int, default=15, help="number of epochs (default 15)")
    t.add_argument("--batch", type=int, default=64, help="minibatch size (default 64)")
    t.add_argument("--lambda", dest="lambda_kl", type=float, default=1e-5, help="KL weight (default 1e-5)")
    t.add_argument("--latent", type=int, default=100, help="latent dimensions, quaternion units for qvae (default 100)")
    t.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    t.add_argument("--out", default="runs/qvae", help="output directory (default runs/qvae)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--size", type=int, default=64, help="image side length in pixels (default 64)")
    t.add_argument("--channels", type=_channels, default=(32, 64, 128, 256, 512),
                   help="encoder channel plan, comma separated (default 32,64,128,256,512)")
    t.add_argument("--lr", type=float, default=5e-4, help="initial Adam learning rate (default 5e-4)")
    t.add_argument("--decay-every", type=int, default=10, help="halve the learning rate every N epochs (default 10)")
    t.add_argument("--kl-variant", choices=["paper", "real"], default="paper", help="KL closed form (default paper)")
    t.add_argument("--limit", type=int, help="use at most this many images")

    r = sub.add_parser("reconstruct", help="reconstruct images and report SSIM/MSE",
                       description="Write a originals/reconstructions grid and a JSON report.")
    r.add_argument("--ckpt", required=True, help="checkpoint file")
    r.add_argument("--data", required=True, help="directory of images")
    r.add_argument("--n", type=int, default=16, help="number of images (default 16)")
    r.add_argument("--out", default=".", help="output directory (default .)")

    g = sub.add_parser("generate", help="decode samples from the prior",
                       description="Write a grid of images decoded from prior samples and a JSON report.")
    g.add_argument("--ckpt", required=True, help="checkpoint file")
    g.add_argument("--n", type=int, default=16, help="number of images (default 16)")
    g.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    g.add_argument("--out", default=".", help="output directory (default .)")

    s = sub.add_parser("stats", help="second-order statistics report",
                       description="Properness diagnostics for a text file of quaternion rows or a checkpoint's latents.")
    s.add_argument("--input", required=True, help="text file (4 columns per quaternion dimension) or checkpoint")
    s.add_argument("--data", help="image directory (required when --input is a checkpoint)")
    s.add_argument("--samples", type=int, default=16, help="latent draws per image for checkpoints (default 16)")
    s.add_argument("--seed", type=int, default=0, help="sampling seed for checkpoints (default 0)")
    s.add_argument("--out", help="JSON output path (default stdout)")

    pr = sub.add_parser("params", help="parameter accounting per layer",
                        description="Print per-layer parameter counts and the quaternion/real ratio.")
    pr.add_argument("--model", choices=["qvae", "vae", "both"], default="both", help="model kind (default both)")
    pr.add_argument("--channels", type=_channels, default=(32, 64, 128, 256, 512),
                    help="encoder channel plan (default 32,64,128,256,512)")
    pr.add_argument("--latent", type=int, default=100, help="latent dimensions (default 100)")
    pr.add_argument("--size", type=int, default=64, help="image side length (default 64)")
    return p


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and args.config:
        sp = _subparser(parser, "train")
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(overrides, dict):
            parser.error("config file must hold a JSON object")
        dests = {a.dest for a in sp._actions} - {"help", "config"}
        alias = {"lambda": "lambda_kl", "decay-every": "decay_every", "kl-variant": "kl_variant"}
        overrides = {alias.get(k, k): v for k, v in overrides.items()}
        unknown = set(overrides) - dests
        if unknown:
            parser.error(f"unknown keys in config file: {', '.join(sorted(unknown))}")
        if "channels" in overrides and isinstance(overrides["channels"], list):
            overrides["channels"] = tuple(overrides["channels"])
        sp.set_defaults(**overrides)
        args = parser.parse_args(argv)
    if args.command == "train" and not args.data:
        parser.error("train: --data is required")
    return args


def _write_json(path, obj) -> None:
    checkpoint.atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


# subcommands ---------------------------------------------------------------------------

def _spec_totals(config: QvaeConfig):
    specs = model_specs(config)
    total = sum(count_parameters(s) for s in specs.values())
    conv = sum(count_weights(s) for s in specs.values() if not s.kind.is_dense)
    return specs, total, conv


def cmd_train(args) -> int:
    from .data import load_dataset

    config = QvaeConfig(encoder_channels=args.channels, latent_dim=args.latent, lambda_kl=args.lambda_kl,
                        kl_variant=args.kl_variant, input_size=args.size, seed=args.seed, model=args.model)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, decay_every=args.decay_every)
    try:
        dataset = load_dataset(args.data, config.input_size, limit=args.limit)
    except (QvaeError, OSError) as exc:
        raise InputFailure(str(exc))
    _, total, _ = _spec_totals(config)
    other = QvaeConfig.from_dict({**config.to_dict(), "model": "vae" if args.model == "qvae" else "qvae"})
    _, other_total, _ = _spec_totals(other)
    q, r = (total, other_total) if args.model == "qvae" else (other_total, total)
    print(f"params: model={args.model} total={total} (qvae={q} vae={r} ratio={q / r:.4f})", flush=True)
    print(f"data: {len(dataset)} images from {args.data}", flush=True)
    for rec in train(config, tc, dataset, out_dir=args.out, resume=args.resume):
        print(f"epoch {rec.epoch + 1}/{tc.epochs} loss={rec.loss:.6f} bce={rec.bce:.6f} "
              f"kl={rec.kl:.4f} lr={rec.lr:.3e}", flush=True)
    print(f"checkpoint: {Path(args.out) / 'last.qvae'}")
    return EXIT_OK


def _load_checkpoint_model(path):
    try:
        return load_model(path)
    except CheckpointError as exc:
        raise InputFailure(str(exc))


def cmd_reconstruct(args) -> int:
    from .data import load_dataset
    from .images import comparison_grid, save_png

    model, _ = _load_checkpoint_model(args.ckpt)
    try:
        dataset = load_dataset(args.data, model.config.input_size)
    except (QvaeError, OSError) as exc:
        raise InputFailure(str(exc))
    n = args.n
    if n > len(dataset):
        log.warning("requested %d images but the dataset has %d; using %d", n, len(dataset), len(dataset))
        print(f"warning: --n {n} clamped to {len(dataset)}", file=sys.stderr)
        n = len(dataset)
    ev = evaluate_reconstruction(model, dataset, n)
    out = Path(args.out)
    save_png(out / "reconstruction.png", comparison_grid(ev["originals"], ev["reconstructions"]))
    report = {"ssim": ev["ssim"], "mse": ev["mse"], "n": n, "ckpt": str(args.ckpt)}
    _write_json(out / "reconstruction.json", report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_generate(args) -> int:
    from .images import image_grid, save_png
    from .model import features_to_quaternions
    from .stats import table1_check

    model, _ = _load_checkpoint_model(args.ckpt)
    z = model.sample_prior(args.n, args.seed)
    images = model.generate(args.n, args.seed)
    out = Path(args.out)
    save_png(out / "generated.png", image_grid(images))
    report = {"n": args.n, "seed": args.seed, "ckpt": str(args.ckpt)}
    if model.quaternion:
        checks = table1_check(features_to_quaternions(z.astype(np.float64)), 1.0)
        report["latent_table1"] = {k: {"observed": o, "expected": e, "tolerance": t, "ok": bool(ok)}
                                   for k, (o, e, t, ok) in checks.items()}
        report["latent_E|z|^2"] = float(np.mean(np.sum(z.astype(np.float64) ** 2, axis=1)))
    _write_json(out / "generated.json", report)
    print(json.dumps({k: v for k, v in report.items() if k != "latent_table1"}))
    return EXIT_OK


def _is_checkpoint(path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == checkpoint.MAGIC
    except OSError as exc:
        raise InputFailure(str(exc))


def cmd_stats(args) -> int:
    from .stats import load_quaternion_text, stats_report

    if _is_checkpoint(args.input):
        samples = _checkpoint_latents(args)
    else:
        try:
            samples = load_quaternion_text(args.input)
        except (OSError, ValueError) as exc:
            raise InputFailure(f"cannot parse {args.input}: {exc}")
    try:
        report = stats_report(samples)
    except QvaeError as exc:
        raise InputFailure(str(exc))
    report["input"] = str(args.input)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        checkpoint.atomic_write(args.out, (text + "\n").encode())
    else:
        print(text)
    return EXIT_OK


def _checkpoint_latents(args):
    from .data import load_dataset
    from .model import features_to_quaternions
    from .tensor import no_grad

    model, _ = _load_checkpoint_model(args.input)
    if not model.quaternion:
        raise InputFailure("stats on latents needs a quaternion checkpoint")
    if not args.data:
        raise InputFailure("--data is required when --input is a checkpoint")
    try:
        dataset = load_dataset(args.data, model.config.input_size)
    except (QvaeError, OSError) as exc:
        raise InputFailure(str(exc))
    rng = np.random.default_rng(args.seed)
    zs = []
    with no_grad():
        for start in range(0, len(dataset), 64):
            dist = model.encode(dataset.batch(range(start, min(len(dataset), start + 64)), model.config.np_dtype))
            for _ in range(args.samples):
                zs.append(model.reparameterize(dist, rng).data.astype(np.float64))
    return features_to_quaternions(np.concatenate(zs))


def parameter_rows(config: QvaeConfig) -> list:
    rows = []
    for name, spec in model_specs(config).items():
        rows.append({"layer": name, "kind": spec.kind.value, "in": spec.in_channels, "out": spec.out_channels,
                     "kernel": spec.kernel, "weights": count_weights(spec),
                     "bias": spec.out_channels, "total": count_parameters(spec),
                     "conv": not spec.kind.is_dense})
    return rows


def cmd_params(args) -> int:
    kinds = ["qvae", "vae"] if args.model == "both" else [args.model]
    totals = {}
    for kind in kinds:
        try:
            config = QvaeConfig(encoder_channels=args.channels, latent_dim=args.latent,
                                input_size=args.size, model=kind)
        except (QvaeError, ValueError) as exc:
            print(f"qvae params: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        rows = parameter_rows(config)
        print(f"[{kind}]")
        print(f"{'layer':<10}{'kind':<20}{'in':>6}{'out':>6}{'k':>3}{'weights':>12}{'bias':>8}{'total':>12}")
        for r in rows:
            print(f"{r['layer']:<10}{r['kind']:<20}{r['in']:>6}{r['out']:>6}{r['kernel']:>3}"
                  f"{r['weights']:>12}{r['bias']:>8}{r['total']:>12}")
        total = sum(r["total"] for r in rows)
        conv = sum(r["weights"] for r in rows if r["conv"])
        totals[kind] = (total, conv)
        print(f"total {kind}: {total}  (conv weights {conv})\n")
    if len(totals) == 2:
        (qt, qc), (rt, rc) = totals["qvae"], totals["vae"]
        print(f"ratio qvae/vae total: {qt / rt:.6f}")
        print(f"ratio qvae/vae conv weights: {qc / rc:.6f}")
    print("reference (published, 64x64 CelebA models): "
          f"vae {PUBLISHED_TOTALS['vae']:,}  qvae {PUBLISHED_TOTALS['qvae']:,}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "reconstruct": cmd_reconstruct, "generate": cmd_generate,
            "stats": cmd_stats, "params": cmd_params}


def _limit_threads():
    value = os.environ.get("QVAE_THREADS", "0")
    try:
        n = int(value)
    except ValueError:
        n = 0
    if n > 0:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=n)
    return None


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        return COMMANDS[args.command](args)
    except InputFailure as exc:
        print(f"qvae {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Divergence as exc:
        print(f"qvae {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, OSError) as exc:
        print(f"qvae {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (QvaeError, ValueError) as exc:
        print(f"qvae {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
