"""Command-line front end: ``measure``, ``reconstruct``, ``evaluate``, ``sweep``.

Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats, metrics
from .sensing import DenseGaussian, PartialFourier, make_radial_mask, measure_noisy
from .solver import SolverConfig, reconstruct, with_overrides
from .tensor_cp import DegenerateEigensystem

log = logging.getLogger("nlrtfa")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
RESULT_COLUMNS = ("image", "method", "csr", "sigma", "psnr", "ssim")


class UsageError(Exception):
    pass


def fmt_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def fmt_ssim(v: float) -> str:
    return f"{v:.6f}"


def _need(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _shape(text: str | None):
    if text is None:
        return None
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad shape {text!r}, expected HxW") from None
    return h, w


def make_operator(kind: str, dims, csr: float, seed: int):
    if kind == "fourier":
        return PartialFourier(make_radial_mask(dims, csr, lines_seed=seed))
    if kind == "gaussian":
        return DenseGaussian.from_csr(dims, csr, seed)
    raise UsageError(f"unknown sensing variant {kind!r}")


def operator_filename(op) -> str:
    return "mask.msk" if isinstance(op, PartialFourier) else "operator.phi"


def csr_actual(op) -> float:
    H, W = op.input_dims
    return op.output_dim / (H * W)


def solver_config(config_path=None, csr=None, sigma=0.0, **overrides) -> SolverConfig:
    cfg = SolverConfig(noise_sigma=sigma)
    settings = formats.read_solver_overrides(config_path, csr) if config_path else {}
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return with_overrides(cfg, **settings) if settings else cfg


# -- measure ----------------------------------------------------------------

def cmd_measure(args) -> int:
    img = formats.load_image(_need(args.image, "image"), args.size)
    kind = "gaussian" if args.gaussian else "fourier"
    op = make_operator(kind, img.shape, args.csr, args.seed)
    y = measure_noisy(op, img, args.sigma, noise_seed=args.seed + 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_operator(out / operator_filename(op), op)
    formats.write_measurement(out / "measurement.mea", y)
    formats.save_image(out / "truth.png", img)
    H, W = img.shape
    print(f"M={op.output_dim} N={H * W} csr_actual={csr_actual(op):.6f}")
    return EXIT_OK


# -- reconstruct ------------------------------------------------------------

def cmd_reconstruct(args) -> int:
    meas_path = _need(args.measurement, "measurement file")
    op_path = _need(args.operator, "operator file")
    truth = formats.load_image(_need(args.truth, "truth image")) if args.truth else None
    dims = _shape(args.shape) or (truth.shape if truth is not None else None)
    op = formats.read_operator(op_path, dims)
    y = formats.read_measurement(meas_path)
    cfg = solver_config(
        args.config,
        csr=round(csr_actual(op), 2) if args.csr is None else args.csr,
        sigma=args.sigma,
        outer_iters=args.outer_iters,
        inner_iters=args.inner_iters,
        eta=args.eta,
        beta=args.beta,
    )
    if truth is not None and truth.shape != op.input_dims:
        raise UsageError(f"truth image is {truth.shape}, operator acts on {op.input_dims}")
    img, report = reconstruct(op, y, cfg, seed=args.seed, truth=truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.save_image(out / "recon.png", img)
    (out / "report.csv").write_text(report.to_csv())
    final = report.final
    msg = f"outer_iters={final.outer_iter} data_fidelity={final.data_fidelity:.6g}"
    if truth is not None:
        msg += f" psnr={fmt_psnr(metrics.psnr(formats.to_uint8(img), truth))}"
    print(msg)
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------

def _result_key(row):
    return (row["image"], row["method"], float(row["csr"]), float(row["sigma"]))


def upsert_results(path: Path, row: dict) -> list[dict]:
    """Insert or replace ``row`` in a results table keyed by image/method/csr/sigma."""
    rows = []
    if path.exists():
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if _result_key(r) != _result_key(row)]
    rows.append(row)
    rows.sort(key=_result_key)
    write_results(path, rows)
    return rows


def write_results(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def cmd_evaluate(args) -> int:
    a = formats.load_image(_need(args.reference, "image"))
    b = formats.load_image(_need(args.test, "image"))
    if a.shape != b.shape:
        raise UsageError(f"images differ in shape: {a.shape} vs {b.shape}")
    p, s = metrics.quality(a, b)
    print(f"{fmt_psnr(p)},{fmt_ssim(s)}")
    if args.csv:
        row = {
            "image": args.name or Path(args.reference).stem,
            "method": args.method,
            "csr": f"{args.csr:.2f}",
            "sigma": f"{args.sigma:g}",
            "psnr": fmt_psnr(p),
            "ssim": fmt_ssim(s),
        }
        upsert_results(Path(args.csv), row)
    return EXIT_OK


# -- sweep ------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    images: list[Path]
    sensing: str = "fourier"
    csrs: list[float] = field(default_factory=lambda: [0.1])
    sigmas: list[float] = field(default_factory=lambda: [0.0])
    master_seed: int = 0
    size: int | None = None
    out: Path = Path("results")
    config_path: Path | None = None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise UsageError(f"experiment spec not found: {path}")
        if not parser.has_section("experiment"):
            raise UsageError(f"{path}: missing [experiment] section")
        sec = parser["experiment"]
        base = path.parent

        def floats(key, default):
            raw = sec.get(key)
            return [float(v) for v in raw.split(",")] if raw else default

        images = [base / p.strip() for p in sec.get("images", "").split(",") if p.strip()]
        spec = cls(
            images=images,
            sensing=sec.get("sensing", "fourier").strip(),
            csrs=floats("csr", [0.1]),
            sigmas=floats("sigma", [0.0]),
            master_seed=sec.getint("master_seed", 0),
            size=sec.getint("size", None),
            out=base / sec.get("out", "results"),
            config_path=path,
        )
        spec.validate()
        return spec

    def validate(self) -> None:
        if not self.images:
            raise UsageError("experiment lists no images")
        for p in self.images:
            _need(p, "image")
        if any(not (0 < c <= 1) for c in self.csrs):
            raise UsageError("csr values must lie in (0, 1]")
        if any(s < 0 for s in self.sigmas):
            raise UsageError("sigma values must be >= 0")
        if self.sensing not in ("fourier", "gaussian"):
            raise UsageError(f"unknown sensing variant {self.sensing!r}")

    def cells(self):
        for i, img in enumerate(self.images):
            for j, csr in enumerate(sorted(self.csrs)):
                for k, sigma in enumerate(self.sigmas):
                    yield (i, j, k), img, csr, sigma


def cell_seeds(master: int, index) -> tuple[int, int, int]:
    """Operator, noise and solver seeds for one grid cell."""
    a, b, c = np.random.SeedSequence([master, *index]).generate_state(3)
    return int(a), int(b), int(c)


def cell_dir(spec: ExperimentSpec, img: Path, csr: float, sigma: float) -> Path:
    return spec.out / img.stem / f"csr{csr:.2f}_sigma{sigma:g}"


def run_cell(spec: ExperimentSpec, index, img_path: Path, csr: float, sigma: float) -> dict:
    op_seed, noise_seed, solver_seed = cell_seeds(spec.master_seed, index)
    img = formats.load_image(img_path, spec.size)
    op = make_operator(spec.sensing, img.shape, csr, op_seed)
    y = measure_noisy(op, img, sigma, noise_seed)
    cfg = solver_config(spec.config_path, csr=csr, sigma=sigma)
    out = cell_dir(spec, img_path, csr, sigma)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_operator(out / operator_filename(op), op)
    formats.write_measurement(out / "measurement.mea", y)
    recon, report = reconstruct(op, y, cfg, seed=solver_seed, truth=img)
    formats.save_image(out / "recon.png", recon)
    # sweep CSVs stay byte-reproducible; wall-clock times go to a plain log
    (out / "report.csv").write_text(report.to_csv(include_timing=False))
    (out / "timing.log").write_text("".join(f"{r.outer_iter} {r.seconds:.3f}\n" for r in report.records))
    saved = formats.to_uint8(recon).astype(float)
    p, s = metrics.quality(img, saved)
    return {
        "image": img_path.stem,
        "method": "ours",
        "csr": f"{csr:.2f}",
        "sigma": f"{sigma:g}",
        "psnr": fmt_psnr(p),
        "ssim": fmt_ssim(s),
    }


def _run_cell_safe(args):
    spec, index, img, csr, sigma = args
    try:
        return run_cell(spec, index, img, csr, sigma), None
    except Exception as exc:  # recorded per cell, sweep carries on
        return None, f"{img.stem} csr={csr:.2f} sigma={sigma:g}: {type(exc).__name__}: {exc}"


def noise_trend_warnings(rows) -> list[str]:
    """Soft check: mean PSNR over CSr should not rise with sigma, per image."""
    out = []
    by_image: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        if r["psnr"] != "inf":
            by_image.setdefault(r["image"], {}).setdefault(float(r["sigma"]), []).append(float(r["psnr"]))
    for image, table in by_image.items():
        sig = sorted(table)
        means = [np.mean(table[s]) for s in sig]
        for s0, s1, m0, m1 in zip(sig, sig[1:], means, means[1:]):
            if m1 > m0:
                out.append(f"{image}: mean PSNR rises from sigma={s0:g} ({m0:.2f}) to sigma={s1:g} ({m1:.2f})")
    return out


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.load(_need(args.spec, "experiment spec"))
    if args.out:
        spec.out = Path(args.out)
    if args.seed is not None:
        spec.master_seed = args.seed
    spec.out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, idx, img, csr, sigma) for idx, img, csr, sigma in spec.cells()]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_cell_safe, jobs))
    else:
        results = [_run_cell_safe(j) for j in jobs]
    rows = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    write_results(spec.out / "results.csv", rows)
    for e in errors:
        print(f"cell failed: {e}", file=sys.stderr)
    for w in noise_trend_warnings(rows):
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(rows)} cells written to {spec.out / 'results.csv'}, {len(errors)} failed")
    return EXIT_NUMERIC if errors else EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlrtfa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="simulate compressive measurements of an image")
    p.add_argument("--image", required=True)
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--fourier", action="store_true", help="pseudo-radial partial Fourier")
    kind.add_argument("--gaussian", action="store_true", help="dense Gaussian matrix")
    p.add_argument("--csr", type=float, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--size", type=int, default=None, help="center-crop to SIZE x SIZE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("reconstruct", help="reconstruct an image from measurements")
    p.add_argument("--measurement", required=True)
    p.add_argument("--operator", required=True, help="mask (.msk) or Gaussian operator (.phi) file")
    p.add_argument("--config", default=None)
    p.add_argument("--csr", type=float, default=None, help="config section to use (default: actual CSr)")
    p.add_argument("--sigma", type=float, default=0.0, help="noise level, scales eta")
    p.add_argument("--truth", default=None)
    p.add_argument("--shape", default=None, help="HxW for Gaussian operators")
    p.add_argument("--outer-iters", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="PSNR and SSIM of a test image against a reference")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--csv", default=None, help="results table to update")
    p.add_argument("--name", default=None, help="image name for the table (default: reference stem)")
    p.add_argument("--method", default="ours")
    p.add_argument("--csr", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run an experiment grid from a spec file")
    p.add_argument("spec", nargs="?", default=None)
    p.add_argument("--config", dest="spec_opt", default=None, help="experiment spec file")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the spec)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "sweep":
        args.spec = args.spec or args.spec_opt
        if args.spec is None:
            parser.error("sweep needs a spec file")
    try:
        return args.func(args)
    except (UsageError, configparser.Error, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateEigensystem, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
