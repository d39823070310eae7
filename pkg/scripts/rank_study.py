"""PSNR of clean images after rank-l CP truncation of every patch group."""
from __future__ import annotations

import argparse

from nlrtfa import aggregate, extract_patch_groups, form_tensors, psnr
from nlrtfa.datasets import NAMES, test_image
from nlrtfa.patch_ops import GroupingConfig
from nlrtfa.tensor_cp import lowrank_approximation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", nargs="+", default=list(NAMES[:4]))
    ap.add_argument("--ranks", nargs="+", type=int, default=[1, 2, 4, 8])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--patch", type=int, default=8)
    args = ap.parse_args()

    cfg = GroupingConfig(args.patch, args.patch, k=20, stride=2, search_window=20)
    print("image," + ",".join(f"rank{r}" for r in args.ranks))
    for name in args.images:
        img = test_image(name, args.size)
        groups = extract_patch_groups(img, cfg)
        T = form_tensors(img, groups)
        seeds = [(0, p) for p in range(len(groups))]
        row = []
        for ell in args.ranks:
            L, _ = lowrank_approximation(T, ell, seeds)
            num, cnt = aggregate(groups, L, img.shape)
            row.append(f"{psnr(num / cnt, img):.2f}")
        print(name + "," + ",".join(row), flush=True)


if __name__ == "__main__":
    main()
