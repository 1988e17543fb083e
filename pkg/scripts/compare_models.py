"""Train the QVAE and the real baseline on the same images and compare them.

Prints per-epoch BCE for both models, then SSIM/MSE of posterior-mean
reconstructions and parameter totals. Without --data a synthetic corpus
is generated in memory.
"""
import argparse
import json
import time

from qvae.data import Dataset, load_dataset
from qvae.model import QvaeConfig
from qvae.synthetic import synthetic_faces
from qvae.training import TrainConfig, Trainer, evaluate_reconstruction


def run(model, dataset, args):
    config = QvaeConfig(encoder_channels=args.channels, input_size=args.size, model=model, seed=args.seed, lambda_kl=args.lam)
    trainer = Trainer(config, TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr), dataset)
    start = time.perf_counter()
    bce = []
    for _ in range(args.epochs):
        rec = trainer.run_epoch()
        bce.append(rec.bce)
        print(f"{model} epoch {rec.epoch + 1:3d} loss {rec.loss:.5f} bce {rec.bce:.5f} kl {rec.kl:.3f}", flush=True)
    ev = evaluate_reconstruction(trainer.model, dataset)
    return {"params": trainer.model.num_parameters(), "bce_first": bce[0], "bce_last": bce[-1],
            "ssim": ev["ssim"], "mse": ev["mse"], "seconds": time.perf_counter() - start}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", help="image directory (default: synthetic faces)")
    p.add_argument("--n", type=int, default=200, help="synthetic image count")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=lambda t: tuple(int(v) for v in t.split(",")), default=(32, 64, 128, 256, 512))
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--lam", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write the summary here")
    args = p.parse_args()

    if args.data:
        dataset = load_dataset(args.data, args.size)
    else:
        dataset = Dataset.from_array(synthetic_faces(args.n, args.size, seed=args.seed))
    summary = {m: run(m, dataset, args) for m in ("qvae", "vae")}
    summary["param_ratio"] = summary["qvae"]["params"] / summary["vae"]["params"]
    print(json.dumps(summary, indent=2))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
