"""Write the bundled grayscale test images as PNGs for the CLI."""
from __future__ import annotations

import argparse
from pathlib import Path

from nlrtfa.datasets import NAMES, test_image
from nlrtfa.formats import save_image


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="images")
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        save_image(out / f"{name}.png", test_image(name, args.size))
        print(out / f"{name}.png")


if __name__ == "__main__":
    main()
