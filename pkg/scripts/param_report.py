"""Parameter totals for a few channel plans, quaternion vs real."""
import argparse

from qvae.layers import count_parameters, count_weights
from qvae.model import QvaeConfig, model_specs

PLANS = [(32, 64), (32, 64, 128), (32, 64, 128, 256), (32, 64, 128, 256, 512)]


def totals(plan, model, size, latent):
    specs = model_specs(QvaeConfig(encoder_channels=plan, model=model, input_size=size, latent_dim=latent))
    conv = sum(count_weights(s) for s in specs.values() if not s.kind.is_dense)
    return sum(count_parameters(s) for s in specs.values()), conv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--latent", type=int, default=100)
    args = p.parse_args()
    print(f"{'plan':<28}{'qvae':>12}{'vae':>12}{'total ratio':>13}{'conv ratio':>12}")
    for plan in PLANS:
        (qt, qc), (rt, rc) = (totals(plan, m, args.size, args.latent) for m in ("qvae", "vae"))
        print(f"{','.join(map(str, plan)):<28}{qt:>12,}{rt:>12,}{qt / rt:>13.4f}{qc / rc:>12.4f}")


if __name__ == "__main__":
    main()
