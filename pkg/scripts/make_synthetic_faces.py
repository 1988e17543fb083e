"""Write a directory of procedural face-like PNGs for desk-scale runs."""
import argparse

from qvae.synthetic import write_synthetic_faces


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", help="output directory")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    paths = write_synthetic_faces(args.out, args.n, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")


if __name__ == "__main__":
    main()
