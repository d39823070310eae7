import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlrtfa.sensing import (
    DenseGaussian,
    InvalidRatio,
    PartialFourier,
    adjoint,
    as_dense_matrix,
    forward,
    is_conjugate_symmetric,
    make_radial_mask,
    measure_noisy,
)
from nlrtfa.tensor_cp import DimensionMismatch


def walk_lines(H, W, n_lines):
    """Plain-loop rasterizer: nearest bin along each ray, plus mirrored bins."""
    keep = set()
    rmax = math.ceil(math.hypot(H / 2, W / 2))
    for j in range(n_lines):
        th = j * math.pi / n_lines
        for r in range(rmax + 1):
            u, v = round(r * math.sin(th)), round(r * math.cos(th))
            if -(H // 2) <= u <= (H - 1) // 2 and -(W // 2) <= v <= (W - 1) // 2:
                keep.add((u % H, v % W))
    keep |= {((-u) % H, (-v) % W) for u, v in keep}
    return keep


def test_full_mask():
    m = make_radial_mask((8, 6), 1.0)
    assert m.keep.all() and m.csr_actual == 1.0


def test_minimal_mask_matches_walker():
    m = make_radial_mask((8, 8), 1 / 64 + 1e-9)
    assert m.n_lines == 1
    assert {tuple(p) for p in np.argwhere(m.keep)} == walk_lines(8, 8, 1)
    assert m.keep[0, 0]


@pytest.mark.parametrize("dims,csr", [((32, 32), 0.1), ((64, 48), 0.06), ((128, 128), 0.1), ((17, 23), 0.3)])
def test_mask_properties(dims, csr):
    m = make_radial_mask(dims, csr)
    assert m.keep[0, 0]
    assert is_conjugate_symmetric(m.keep)
    assert m.csr_actual >= csr
    # one line fewer would not have been enough
    if m.n_lines > 1:
        assert len(walk_lines(*dims, m.n_lines - 1)) < csr * dims[0] * dims[1]
    assert {tuple(p) for p in np.argwhere(m.keep)} == walk_lines(*dims, m.n_lines)


def test_mask_deterministic_and_validated():
    assert make_radial_mask((40, 40), 0.1) == make_radial_mask((40, 40), 0.1)
    for bad in (0, -0.1, 1.5):
        with pytest.raises(InvalidRatio):
            make_radial_mask((8, 8), bad)


def test_fourier_forward_examples(rng):
    op = PartialFourier(make_radial_mask((8, 8), 1.0))
    assert np.all(forward(op, np.zeros((8, 8))) == 0)
    y = forward(op, np.full((8, 8), 3.0))
    assert y[0] == pytest.approx(3.0 * 8)
    assert np.allclose(y[1:], 0)
    x = rng.standard_normal((8, 8))
    np.testing.assert_allclose(adjoint(op, forward(op, x)), x, atol=1e-10)


def test_fourier_kept_bins_row_major(rng):
    keep = rng.random((6, 5)) < 0.4
    keep[0, 0] = True
    op = PartialFourier(keep)
    x = rng.standard_normal((6, 5))
    np.testing.assert_allclose(op.forward(x), np.fft.fft2(x, norm="ortho")[keep], atol=1e-12)


def test_d_dh_identity(rng):
    op = PartialFourier(make_radial_mask((16, 16), 0.2))
    y = rng.standard_normal(op.output_dim) + 1j * rng.standard_normal(op.output_dim)
    np.testing.assert_allclose(op.zero_fill(y)[op.mask.keep], y)
    assert set(np.unique(op.sampling_grid)) <= {0.0, 1.0}


def test_adjoint_imag_residue(rng):
    op = PartialFourier(make_radial_mask((16, 12), 0.15))
    grid = np.fft.ifft2(op.zero_fill(op.forward(rng.standard_normal((16, 12)))), norm="ortho")
    assert np.abs(grid.imag).max() < 1e-10


def test_gaussian_examples(rng):
    op = DenseGaussian.generate((8, 8), 13, seed=4)
    x = rng.standard_normal((8, 8))
    y = rng.standard_normal(13)
    Phi = np.random.default_rng(4).standard_normal((13, 64)) / math.sqrt(13)
    np.testing.assert_allclose(forward(op, x), Phi @ x.ravel(), atol=1e-12)
    np.testing.assert_allclose(adjoint(op, y).ravel(), Phi.T @ y, atol=1e-12)
    assert op == DenseGaussian.generate((8, 8), 13, seed=4)
    assert DenseGaussian.from_csr((10, 10), 0.25, 0).output_dim == 25


def test_dimension_checks():
    op = DenseGaussian.generate((4, 4), 5, 0)
    with pytest.raises(DimensionMismatch):
        op.forward(np.zeros((4, 5)))
    with pytest.raises(DimensionMismatch):
        op.adjoint(np.zeros(4))


def test_noise_statistics():
    x = np.zeros((100, 100))
    y = measure_noisy(DenseGaussian(np.eye(10_000), (100, 100)), x, 30.0, noise_seed=5)
    assert abs(y.std() / 30.0 - 1) < 0.05
    op = PartialFourier(np.ones((100, 100), bool))
    yc = measure_noisy(op, x, 30.0, noise_seed=5)
    assert abs(yc.real.std() / (30 / math.sqrt(2)) - 1) < 0.05
    assert abs(yc.imag.std() / (30 / math.sqrt(2)) - 1) < 0.05
    assert abs(np.mean(np.abs(yc) ** 2) / 900 - 1) < 0.05
    np.testing.assert_array_equal(yc, measure_noisy(op, x, 30.0, noise_seed=5))
    assert np.array_equal(measure_noisy(op, x + 1, 0.0), op.forward(x + 1))


def test_as_dense_matrix(rng):
    op = PartialFourier(make_radial_mask((6, 6), 0.3))
    F = as_dense_matrix(op)
    x = rng.standard_normal((6, 6))
    np.testing.assert_allclose(F @ x.ravel(), op.forward(x), atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from([(8, 8), (9, 7), (16, 10)]), st.floats(0.05, 0.9))
def test_fourier_adjointness(seed, dims, csr):
    rng = np.random.default_rng(seed)
    op = PartialFourier(make_radial_mask(dims, csr))
    x = rng.standard_normal(dims)
    y = rng.standard_normal(op.output_dim) + 1j * rng.standard_normal(op.output_dim)
    # real-linear adjoint: Re<Phi x, y> = <x, adjoint(y)>
    lhs = np.real(np.vdot(y, op.forward(x)))
    rhs = np.sum(x * op.adjoint(y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    # complex inner product for measurements of real images
    y2 = op.forward(rng.standard_normal(dims))
    assert abs(np.vdot(y2, op.forward(x)) - np.sum(x * op.adjoint(y2))) <= 1e-10 * max(1.0, np.abs(np.vdot(y2, y2)))


@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_gaussian_adjointness(seed, M):
    rng = np.random.default_rng(seed)
    op = DenseGaussian.generate((6, 5), M, seed)
    x, y = rng.standard_normal((6, 5)), rng.standard_normal(M)
    lhs, rhs = y @ op.forward(x), np.sum(x * op.adjoint(y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
