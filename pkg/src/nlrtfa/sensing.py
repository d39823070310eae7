"""Measurement operators: partial Fourier with a pseudo-radial mask, and dense
Gaussian. Both act on row-major flattened ``(H, W)`` images.

The Fourier operator uses the orthonormal 2-D DFT, so ``adjoint`` is the exact
Hermitian transpose of ``forward``. Kept frequencies are ordered row-major over
the unshifted DFT grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_cp import DimensionMismatch


class InvalidRatio(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RadialMask:
    keep: np.ndarray  # (H, W) bool over the unshifted DFT grid
    csr_target: float
    n_lines: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape

    @property
    def csr_actual(self) -> float:
        return float(self.keep.sum()) / self.keep.size

    def __eq__(self, other):
        if not isinstance(other, RadialMask):
            return NotImplemented
        return self.keep.shape == other.keep.shape and bool(np.array_equal(self.keep, other.keep))


def is_conjugate_symmetric(keep: np.ndarray) -> bool:
    mirrored = np.roll(keep[::-1, ::-1], (1, 1), axis=(0, 1))
    return bool(np.array_equal(keep, mirrored))


def symmetrize(keep: np.ndarray) -> np.ndarray:
    """Add the conjugate partner ``(-u mod H, -v mod W)`` of every kept bin."""
    return keep | np.roll(keep[::-1, ::-1], (1, 1), axis=(0, 1))


def _rasterize_lines(shape: tuple[int, int], angles: np.ndarray) -> np.ndarray:
    """Mark the nearest bins along rays from DC at each angle, one step per unit radius."""
    H, W = shape
    keep = np.zeros(shape, dtype=bool)
    rmax = int(math.ceil(math.hypot(H / 2, W / 2)))
    r = np.arange(rmax + 1)
    fu = np.rint(np.outer(np.sin(angles), r)).astype(int)
    fv = np.rint(np.outer(np.cos(angles), r)).astype(int)
    inside = (fu >= -(H // 2)) & (fu <= (H - 1) // 2) & (fv >= -(W // 2)) & (fv <= (W - 1) // 2)
    keep[fu[inside] % H, fv[inside] % W] = True
    return keep


def radial_lines_mask(shape: tuple[int, int], n_lines: int, jitter: float = 0.0, seed: int = 0) -> np.ndarray:
    """Symmetrized mask of ``n_lines`` equiangular lines through DC."""
    angles = np.arange(n_lines) * np.pi / n_lines
    if jitter:
        angles = angles + np.random.default_rng(seed).uniform(-jitter, jitter, n_lines) * np.pi / n_lines
    return symmetrize(_rasterize_lines(shape, angles))


def make_radial_mask(dims: tuple[int, int], csr: float, lines_seed: int = 0, jitter: float = 0.0) -> RadialMask:
    """Pseudo-radial sampling mask reaching at least ``csr`` of the DFT bins.

    The line count grows from one until the kept fraction reaches ``csr``; the
    overshoot is kept. ``lines_seed`` only matters when ``jitter`` is nonzero.
    """
    if not (0 < csr <= 1):
        raise InvalidRatio(f"sampling ratio must be in (0, 1], got {csr}")
    H, W = dims
    if csr >= 1:
        return RadialMask(np.ones(dims, dtype=bool), 1.0, 0)
    target = csr * H * W
    max_lines = 4 * (H + W)
    for n_lines in range(1, max_lines + 1):
        keep = radial_lines_mask(dims, n_lines, jitter, lines_seed)
        if keep.sum() >= target:
            return RadialMask(keep, csr, n_lines)
    return RadialMask(np.ones(dims, dtype=bool), csr, max_lines)


class PartialFourier:
    """``y = D F x``: orthonormal 2-D DFT followed by selection of the kept bins."""

    complex_output = True

    def __init__(self, mask: RadialMask | np.ndarray):
        if not isinstance(mask, RadialMask):
            keep = np.asarray(mask, dtype=bool)
            mask = RadialMask(keep, keep.mean())
        self.mask = mask
        self._flat = np.flatnonzero(mask.keep.ravel())

    @property
    def input_dims(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def output_dim(self) -> int:
        return self._flat.size

    @property
    def sampling_grid(self) -> np.ndarray:
        """Diagonal of ``D^H D`` on the DFT grid, as floats."""
        return self.mask.keep.astype(float)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = _check_image(x, self.input_dims)
        return np.fft.fft2(x, norm="ortho").ravel()[self._flat]

    def zero_fill(self, y: np.ndarray) -> np.ndarray:
        """``D^H y`` on the DFT grid."""
        y = _check_measurement(y, self.output_dim)
        grid = np.zeros(self.mask.keep.size, dtype=complex)
        grid[self._flat] = y
        return grid.reshape(self.input_dims)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(self.zero_fill(y), norm="ortho").real

    def __eq__(self, other):
        return isinstance(other, PartialFourier) and self.mask == other.mask


@dataclass(eq=False)
class DenseGaussian:
    """``y = Phi x`` with i.i.d. ``N(0, 1/M)`` entries."""

    matrix: np.ndarray  # (M, N)
    input_dims: tuple[int, int]
    seed: int = 0
    complex_output: bool = field(default=False, init=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.input_dims[0] * self.input_dims[1]:
            raise DimensionMismatch(f"matrix {self.matrix.shape} does not act on {self.input_dims} images")

    @classmethod
    def generate(cls, dims: tuple[int, int], M: int, seed: int) -> "DenseGaussian":
        if M < 1:
            raise InvalidRatio("need at least one measurement")
        N = dims[0] * dims[1]
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((M, N)) / math.sqrt(M), tuple(dims), seed)

    @classmethod
    def from_csr(cls, dims: tuple[int, int], csr: float, seed: int) -> "DenseGaussian":
        if not (0 < csr <= 1):
            raise InvalidRatio(f"sampling ratio must be in (0, 1], got {csr}")
        return cls.generate(dims, max(1, int(round(csr * dims[0] * dims[1]))), seed)

    @property
    def output_dim(self) -> int:
        return self.matrix.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ _check_image(x, self.input_dims).ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = _check_measurement(y, self.output_dim)
        return (self.matrix.T @ y.real).reshape(self.input_dims)

    def __eq__(self, other):
        return (
            isinstance(other, DenseGaussian)
            and self.input_dims == other.input_dims
            and self.seed == other.seed
            and np.array_equal(self.matrix, other.matrix)
        )


SensingOperator = PartialFourier | DenseGaussian


def _check_image(x: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != tuple(dims):
        raise DimensionMismatch(f"image has shape {x.shape}, operator expects {tuple(dims)}")
    return x


def _check_measurement(y: np.ndarray, M: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (M,):
        raise DimensionMismatch(f"measurement has shape {y.shape}, operator expects ({M},)")
    return y


def forward(op: SensingOperator, x: np.ndarray) -> np.ndarray:
    return op.forward(x)


def adjoint(op: SensingOperator, y: np.ndarray) -> np.ndarray:
    return op.adjoint(y)


def measure_noisy(op: SensingOperator, x: np.ndarray, sigma: float, noise_seed: int = 0) -> np.ndarray:
    """Forward measurement plus white Gaussian noise of total variance ``sigma**2``.

    Complex measurements split the variance equally between the real and
    imaginary parts.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    y = op.forward(x)
    if sigma == 0:
        return y
    rng = np.random.default_rng(noise_seed)
    if np.iscomplexobj(y):
        e = rng.standard_normal((2, y.size)) * (sigma / math.sqrt(2))
        return y + (e[0] + 1j * e[1])
    return y + rng.standard_normal(y.size) * sigma


def as_dense_matrix(op: SensingOperator) -> np.ndarray:
    """Materialize ``op`` as an ``(M, N)`` matrix by applying it to unit images."""
    H, W = op.input_dims
    N = H * W
    cols = [op.forward(np.eye(N)[j].reshape(H, W)) for j in range(N)]
    return np.stack(cols, axis=1)
