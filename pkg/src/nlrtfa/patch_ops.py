"""Overlapping patch grouping by nonlocal block matching, patch-group tensor
formation (gather) and scatter-back aggregation.

Coordinates are the top-left ``(row, col)`` of an ``m x n`` patch. A group's
tensor stacks its member patches along the third axis, nearest first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_cp import DimensionMismatch

_CHUNK_ELEMS = 4_000_000


class ImageTooSmall(ValueError):
    pass


class OutOfBounds(IndexError):
    pass


@dataclass(frozen=True)
class GroupingConfig:
    patch_m: int = 4
    patch_n: int = 4
    k: int = 50
    stride: int = 2
    search_window: int = 20  # half-width in pixels; 0 searches the whole image

    def __post_init__(self):
        if self.patch_m < 2 or self.patch_n < 2:
            raise ValueError("patch dims must be >= 2")
        if self.k < 1:
            raise ValueError("group size k must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.search_window < 0:
            raise ValueError("search_window must be >= 0")

    @property
    def patch_dims(self) -> tuple[int, int]:
        return self.patch_m, self.patch_n


@dataclass(frozen=True)
class PatchGroup:
    reference: tuple[int, int]
    members: np.ndarray  # (k, 2) int, members[0] == reference
    distances: np.ndarray  # (k,) squared Euclidean, non-decreasing
    patch_dims: tuple[int, int]

    @property
    def k(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class GroupSet:
    """All patch groups of an image, stored as arrays.

    Iterating yields :class:`PatchGroup` views.
    """

    members: np.ndarray  # (P, k, 2)
    distances: np.ndarray  # (P, k)
    patch_dims: tuple[int, int]

    def __len__(self) -> int:
        return self.members.shape[0]

    def __getitem__(self, p: int) -> PatchGroup:
        mem = self.members[p]
        return PatchGroup((int(mem[0, 0]), int(mem[0, 1])), mem, self.distances[p], self.patch_dims)

    def __iter__(self) -> Iterator[PatchGroup]:
        return (self[p] for p in range(len(self)))

    @property
    def references(self) -> np.ndarray:
        return self.members[:, 0, :]

    @classmethod
    def from_groups(cls, groups) -> "GroupSet":
        groups = list(groups)
        if not groups:
            raise ValueError("no groups")
        dims = groups[0].patch_dims
        if any(g.patch_dims != dims for g in groups):
            raise DimensionMismatch("groups with different patch dims")
        return cls(
            np.stack([np.asarray(g.members, dtype=int) for g in groups]),
            np.stack([np.asarray(g.distances, dtype=float) for g in groups]),
            dims,
        )


def _as_groupset(groups) -> GroupSet:
    if isinstance(groups, GroupSet):
        return groups
    if isinstance(groups, PatchGroup):
        return GroupSet.from_groups([groups])
    return GroupSet.from_groups(groups)


def reference_positions(length: int, patch: int, stride: int) -> np.ndarray:
    """Reference offsets along one axis; the last one is clamped to the border."""
    last = length - patch
    pos = np.arange(0, last + 1, stride)
    if pos[-1] != last:
        pos = np.append(pos, last)
    return pos


def _patch_vectors(img: np.ndarray, m: int, n: int) -> np.ndarray:
    win = sliding_window_view(img, (m, n))
    return np.ascontiguousarray(win.reshape(win.shape[0] * win.shape[1], m * n))


def extract_patch_groups(img: np.ndarray, cfg: GroupingConfig) -> GroupSet:
    """Group every reference patch with its ``k - 1`` nearest patches.

    References tile the image at ``cfg.stride`` with the final row and column
    clamped to the border. Candidates are all patch positions whose offset from
    the reference is within ``cfg.search_window`` in both axes (or every
    position if it is 0). The reference always leads its group; the other
    members are ranked by squared Euclidean distance, ties in row-major order.
    """
    img = np.asarray(img, dtype=float)
    m, n = cfg.patch_dims
    H, W = img.shape
    if H < m or W < n:
        raise ImageTooSmall(f"image {H}x{W} is smaller than patch {m}x{n}")
    Hc, Wc = H - m + 1, W - n + 1
    vecs = _patch_vectors(img, m, n)
    rows = reference_positions(H, m, cfg.stride)
    cols = reference_positions(W, n, cfg.stride)
    ref_r, ref_c = (a.ravel() for a in np.meshgrid(rows, cols, indexing="ij"))

    w = cfg.search_window
    exhaustive = w == 0 or (w >= Hc - 1 and w >= Wc - 1)
    if exhaustive:
        n_cand = Hc * Wc
    else:
        dy, dx = np.meshgrid(np.arange(-w, w + 1), np.arange(-w, w + 1), indexing="ij")
        dy, dx = dy.ravel(), dx.ravel()
        n_cand = dy.size

    k = cfg.k
    P = ref_r.size
    members = np.empty((P, k), dtype=np.int64)
    dists = np.empty((P, k))
    chunk = max(1, _CHUNK_ELEMS // (n_cand * m * n))
    for start in range(0, P, chunk):
        sl = slice(start, min(start + chunk, P))
        ref_idx = ref_r[sl] * Wc + ref_c[sl]
        if exhaustive:
            idx = np.broadcast_to(np.arange(n_cand), (ref_idx.size, n_cand))
            valid = None
        else:
            rr = ref_r[sl, None] + dy[None, :]
            cc = ref_c[sl, None] + dx[None, :]
            valid = (rr >= 0) & (rr < Hc) & (cc >= 0) & (cc < Wc)
            idx = np.where(valid, rr * Wc + cc, 0)
        diff = vecs[idx] - vecs[ref_idx][:, None, :]
        d = np.einsum("pcj,pcj->pc", diff, diff)
        is_ref = idx == ref_idx[:, None]
        if valid is not None:
            d[~valid] = np.inf
            is_ref &= valid
        if (n_cand if valid is None else valid.sum(axis=1).min()) < k:
            raise ImageTooSmall(f"fewer than k={k} candidate patches in the search window")
        key = np.where(is_ref, -1.0, d)
        order = np.argsort(key, axis=1, kind="stable")[:, :k]
        members[sl] = np.take_along_axis(idx, order, axis=1)
        dists[sl] = np.take_along_axis(d, order, axis=1)

    coords = np.stack([members // Wc, members % Wc], axis=-1)
    return GroupSet(coords, dists, (m, n))


def _pixel_index(groups: GroupSet, shape: tuple[int, int]) -> np.ndarray:
    """Flat pixel indices of every group tensor entry, shape ``(P, m, n, k)``."""
    m, n = groups.patch_dims
    H, W = shape
    r = groups.members[..., 0]
    c = groups.members[..., 1]
    if r.size and (r.min() < 0 or c.min() < 0 or r.max() + m > H or c.max() + n > W):
        raise OutOfBounds(f"group coordinates fall outside a {H}x{W} image")
    rows = r[:, None, None, :] + np.arange(m)[None, :, None, None]
    cols = c[:, None, None, :] + np.arange(n)[None, None, :, None]
    return rows * W + cols


def form_tensors(img: np.ndarray, groups) -> np.ndarray:
    """Gather every group into its ``(m, n, k)`` tensor; returns ``(P, m, n, k)``."""
    img = np.asarray(img, dtype=float)
    gs = _as_groupset(groups)
    return img.ravel()[_pixel_index(gs, img.shape)]


def form_tensor(img: np.ndarray, g: PatchGroup) -> np.ndarray:
    return form_tensors(img, g)[0]


def aggregate(groups, tensors, dims: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Scatter group tensors back to the image grid.

    Returns ``(numerator, counts)``: the sum of every tensor slice placed at its
    source patch, and the number of patch slices covering each pixel.
    """
    gs = _as_groupset(groups)
    T = np.asarray(tensors, dtype=float)
    if T.ndim == 3:
        T = T[None]
    m, n = gs.patch_dims
    expected = (len(gs), m, n, gs.members.shape[1])
    if T.shape != expected:
        raise DimensionMismatch(f"tensors have shape {T.shape}, groups need {expected}")
    H, W = dims
    idx = _pixel_index(gs, (H, W)).ravel()
    numerator = np.bincount(idx, weights=T.ravel(), minlength=H * W).reshape(H, W)
    counts = np.bincount(idx, minlength=H * W).reshape(H, W).astype(float)
    return numerator, counts


def coverage_counts(groups, dims: tuple[int, int]) -> np.ndarray:
    gs = _as_groupset(groups)
    H, W = dims
    return np.bincount(_pixel_index(gs, (H, W)).ravel(), minlength=H * W).reshape(H, W).astype(float)
