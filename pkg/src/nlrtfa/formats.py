"""Binary files for masks, measurements and Gaussian operators; grayscale image
I/O; flat ``key = value`` solver configs.

All integers and floats are little-endian. Layouts::

    mask         b"NLRTFA-MSK1" | H u32 | W u32 | row-major bits, MSB first
    measurement  b"NLRTFA-MEA1" | flags u8 (1 = complex) | M u64 | f64 values
                 (re, im interleaved when complex)
    gaussian op  b"NLRTFA-PHI1" | M u64 | N u64 | seed u64 | row-major f64
"""
from __future__ import annotations

import configparser
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .sensing import DenseGaussian, PartialFourier, RadialMask

MASK_MAGIC = b"NLRTFA-MSK1"
MEAS_MAGIC = b"NLRTFA-MEA1"
PHI_MAGIC = b"NLRTFA-PHI1"
MAGIC_LEN = 11


class FormatError(ValueError):
    pass


def _read(path) -> bytes:
    return Path(path).read_bytes()


def _expect(buf: bytes, magic: bytes, path) -> None:
    if buf[:MAGIC_LEN] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")


def sniff(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(MAGIC_LEN)


# -- masks ------------------------------------------------------------------

def mask_to_bytes(mask: RadialMask | np.ndarray) -> bytes:
    keep = mask.keep if isinstance(mask, RadialMask) else np.asarray(mask, dtype=bool)
    H, W = keep.shape
    return MASK_MAGIC + struct.pack("<II", H, W) + np.packbits(keep.ravel()).tobytes()


def mask_from_bytes(buf: bytes, path="<bytes>") -> RadialMask:
    _expect(buf, MASK_MAGIC, path)
    H, W = struct.unpack_from("<II", buf, MAGIC_LEN)
    bits = np.frombuffer(buf, dtype=np.uint8, offset=MAGIC_LEN + 8)
    if bits.size != (H * W + 7) // 8:
        raise FormatError(f"{path}: mask payload has {bits.size} bytes, expected {(H * W + 7) // 8}")
    keep = np.unpackbits(bits, count=H * W).astype(bool).reshape(H, W)
    return RadialMask(keep, keep.mean())


def write_mask(path, mask) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


def read_mask(path) -> RadialMask:
    return mask_from_bytes(_read(path), path)


# -- measurements -----------------------------------------------------------

def measurement_to_bytes(y: np.ndarray) -> bytes:
    y = np.asarray(y)
    is_complex = np.iscomplexobj(y)
    payload = y.astype("<c16") if is_complex else y.astype("<f8")
    return MEAS_MAGIC + struct.pack("<BQ", int(is_complex), y.size) + payload.tobytes()


def measurement_from_bytes(buf: bytes, path="<bytes>") -> np.ndarray:
    _expect(buf, MEAS_MAGIC, path)
    flags, M = struct.unpack_from("<BQ", buf, MAGIC_LEN)
    dtype = "<c16" if flags & 1 else "<f8"
    y = np.frombuffer(buf, dtype=dtype, offset=MAGIC_LEN + 9)
    if y.size != M:
        raise FormatError(f"{path}: header says {M} values, payload has {y.size}")
    return y.astype(complex if flags & 1 else float)


def write_measurement(path, y) -> None:
    Path(path).write_bytes(measurement_to_bytes(y))


def read_measurement(path) -> np.ndarray:
    return measurement_from_bytes(_read(path), path)


# -- gaussian operators -----------------------------------------------------

def gaussian_to_bytes(op: DenseGaussian) -> bytes:
    M, N = op.matrix.shape
    return PHI_MAGIC + struct.pack("<QQQ", M, N, op.seed) + op.matrix.astype("<f8").tobytes()


def gaussian_from_bytes(buf: bytes, dims: tuple[int, int] | None = None, path="<bytes>") -> DenseGaussian:
    _expect(buf, PHI_MAGIC, path)
    M, N, seed = struct.unpack_from("<QQQ", buf, MAGIC_LEN)
    data = np.frombuffer(buf, dtype="<f8", offset=MAGIC_LEN + 24)
    if data.size != M * N:
        raise FormatError(f"{path}: expected {M * N} matrix entries, found {data.size}")
    if dims is None:
        side = int(round(N**0.5))
        if side * side != N:
            raise FormatError(f"{path}: N={N} is not square; pass the image shape explicitly")
        dims = (side, side)
    return DenseGaussian(data.reshape(M, N).astype(float), tuple(dims), int(seed))


def write_gaussian(path, op: DenseGaussian) -> None:
    Path(path).write_bytes(gaussian_to_bytes(op))


def read_gaussian(path, dims=None) -> DenseGaussian:
    return gaussian_from_bytes(_read(path), dims, path)


def write_operator(path, op) -> None:
    if isinstance(op, PartialFourier):
        write_mask(path, op.mask)
    else:
        write_gaussian(path, op)


def read_operator(path, dims=None):
    """Load a mask file as a :class:`PartialFourier` or a Gaussian operator file."""
    magic = sniff(path)
    if magic == MASK_MAGIC:
        return PartialFourier(read_mask(path))
    if magic == PHI_MAGIC:
        return read_gaussian(path, dims)
    raise FormatError(f"{path}: unrecognised operator file")


# -- images -----------------------------------------------------------------

def center_crop(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    H, W = img.shape
    h, w = size
    if h > H or w > W:
        raise ValueError(f"cannot crop {H}x{W} image to {h}x{w}")
    top, left = (H - h) // 2, (W - w) // 2
    return img[top : top + h, left : left + w]


def load_image(path, size: tuple[int, int] | int | None = None) -> np.ndarray:
    """Read an image as float grayscale (luma for color inputs), center-cropped to ``size``."""
    with Image.open(path) as im:
        img = np.asarray(im.convert("L"), dtype=float)
    if size is not None:
        if isinstance(size, int):
            size = (size, size)
        img = center_crop(img, size)
    return img


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


# -- solver configs ---------------------------------------------------------

INT_KEYS = {"outer_iters", "inner_iters", "rank_ell", "patch_m", "patch_n", "k", "stride", "search_window"}
FLOAT_KEYS = {"eta", "beta", "noise_sigma", "early_exit_tol"}


def csr_section(csr: float) -> str:
    return f"csr={csr:.2f}"


def parse_overrides(items) -> dict:
    out = {}
    for key, raw in items:
        key = key.strip()
        if key in INT_KEYS:
            out[key] = int(raw)
        elif key in FLOAT_KEYS:
            out[key] = float(raw)
        else:
            raise FormatError(f"unknown solver setting {key!r}")
    return out


def read_solver_overrides(path, csr: float | None = None) -> dict:
    """Settings from ``[solver]`` then, if present, ``[csr=X.XX]`` for ``csr``."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    out = {}
    if parser.has_section("solver"):
        out.update(parse_overrides(parser.items("solver")))
    if csr is not None and parser.has_section(csr_section(csr)):
        out.update(parse_overrides(parser.items(csr_section(csr))))
    return out
