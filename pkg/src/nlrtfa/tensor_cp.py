"""CP decomposition of 3-way tensors with Jenrich's simultaneous-diagonalization
algorithm, rank truncation and reconstruction.

A tensor is a plain ``(m, n, k)`` float array. Batched routines take a leading
group axis, ``(P, m, n, k)``, because the solver decomposes thousands of small
patch-group tensors per outer iteration.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]

PINV_RTOL = 1e-10
PAIR_RTOL = 1e-6
ZERO_RTOL = 1e-12
MAX_RETRIES = 3
# eigenvectors this close to parallel are treated as one near-defective cluster
PARALLEL_COS = 0.999
# sum(lambda^2) / ||T||^2 above this marks a cancelling decomposition
CANCEL_RATIO = 4.0


class DegenerateEigensystem(RuntimeError):
    """The two eigen-systems could not be matched or the slice fit failed."""


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CpFactors:
    """``T = sum_r lambdas[r] * A[:, r] (x) B[:, r] (x) C[:, r]``.

    Columns of ``A``, ``B`` and ``C`` have unit norm and ``lambdas`` is sorted
    by decreasing magnitude.
    """

    lambdas: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.lambdas.shape[0])

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A.shape[0], self.B.shape[0], self.C.shape[0]

    @classmethod
    def empty(cls, dims: tuple[int, int, int]) -> "CpFactors":
        m, n, k = dims
        return cls(np.zeros(0), np.zeros((m, 0)), np.zeros((n, 0)), np.zeros((k, 0)))


@dataclass
class BatchCp:
    """Padded CP factors for a batch of equally shaped tensors.

    Unused component slots carry ``lambdas == 0`` and zero factor columns, so
    a padded batch reconstructs exactly like the trimmed per-tensor factors.
    """

    lambdas: np.ndarray  # (P, R)
    A: np.ndarray  # (P, m, R)
    B: np.ndarray  # (P, n, R)
    C: np.ndarray  # (P, k, R)
    ranks: np.ndarray  # (P,) number of live components
    failed: np.ndarray  # (P,) bool, still degenerate after all retries

    def factors(self, p: int) -> CpFactors:
        r = int(self.ranks[p])
        return CpFactors(
            self.lambdas[p, :r].copy(),
            self.A[p, :, :r].copy(),
            self.B[p, :, :r].copy(),
            self.C[p, :, :r].copy(),
        )


def _entropy(seed: SeedLike) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def random_unit_pair(seed: SeedLike, attempt: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Two random unit vectors in R^k, reproducible from ``(seed, attempt)``."""
    entropy = _entropy(seed)
    if attempt:
        entropy = entropy + [attempt]
    rng = np.random.default_rng(entropy)
    uv = rng.standard_normal((2, k))
    uv /= np.linalg.norm(uv, axis=1, keepdims=True)
    return uv[0], uv[1]


def _check_tensor(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 3 or min(t.shape) < 1:
        raise DimensionMismatch(f"expected a non-empty 3-way tensor, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor has non-finite entries")
    return t


def _core(T: np.ndarray, U: np.ndarray, V: np.ndarray, rank: int):
    """Jenrich on a batch whose ``T_v`` contractions all have numerical rank ``rank``.

    The eigenproblems of ``T_u T_v^+`` and ``T_u^T (T_v^T)^+`` are solved on
    the range of ``T_v`` (a ``rank x rank`` problem), which drops the
    structural zero eigenvalues without changing the remaining eigenpairs.
    Both systems share one spectrum, so columns are paired by equal eigenvalue.
    Groups with complex or repeated eigenvalues go through
    :func:`_resolve_clusters`.
    """
    P = T.shape[0]
    Tu = np.einsum("pijs,ps->pij", T, U)
    Tv = np.einsum("pijs,ps->pij", T, V)
    Us, S, Vh = np.linalg.svd(Tv)
    Ur = Us[:, :, :rank]
    Sr = S[:, :rank]
    Vr = np.swapaxes(Vh[:, :rank, :], 1, 2)

    G = np.einsum("pir,pij,pjq->prq", Ur, Tu, Vr)
    w1, E1 = np.linalg.eig(G / Sr[:, None, :])
    w2, E2 = np.linalg.eig(np.swapaxes(G, 1, 2) / Sr[:, None, :])

    real = np.all(w1.imag == 0, axis=1) & np.all(w2.imag == 0, axis=1)
    o1 = np.argsort(w1.real, axis=1, kind="stable")
    o2 = np.argsort(w2.real, axis=1, kind="stable")
    v1 = np.take_along_axis(w1.real, o1, axis=1)
    v2 = np.take_along_axis(w2.real, o2, axis=1)
    mag = np.maximum(np.abs(v1), np.abs(v2))
    paired = np.all(np.abs(v1 - v2) <= PAIR_RTOL * mag, axis=1)
    gaps = np.abs(np.diff(v1, axis=1))
    near = np.maximum(np.abs(v1[:, 1:]), np.abs(v1[:, :-1]))
    separated = np.all(gaps > PAIR_RTOL * near, axis=1)
    simple = real & paired & separated

    Ared = np.take_along_axis(E1.real, o1[:, None, :], axis=2)
    Bred = np.take_along_axis(E2.real, o2[:, None, :], axis=2)
    ok = np.ones(P, dtype=bool)

    def resolve(groups):
        for p in groups:
            resolved = _resolve_clusters(w1[p], E1[p], w2[p], E2[p], Sr[p])
            if resolved is None:
                ok[p] = False
            else:
                Ared[p], Bred[p] = resolved

    resolve(np.flatnonzero(~simple))
    lam, A, B, C = _fit_slices(T, Ur, Vr, Ared, Bred, ok)

    # Near-parallel eigenvectors are legitimate for exact tensors with nearly
    # parallel factors, but on noisy groups they come with large cancelling
    # components. Only the latter are re-solved as clusters.
    energy = np.einsum("pijs,pijs->p", T, T)
    cancel = np.sum(lam**2, axis=1) > CANCEL_RATIO * energy
    redo = np.flatnonzero(simple & cancel & (_has_parallel(E1) | _has_parallel(E2)))
    if redo.size:
        resolve(redo)
        sub = _fit_slices(T[redo], Ur[redo], Vr[redo], Ared[redo], Bred[redo], ok[redo])
        for full, part in zip((lam, A, B, C), sub):
            full[redo] = part
    ok &= np.all(np.isfinite(lam), axis=1)
    return lam, A, B, C, ok


def _fit_slices(T, Ur, Vr, Ared, Bred, ok):
    """Unit factor columns and slice weights ``W[r, s]`` from
    ``T[:, :, s] ~ sum_r W[r, s] a_r b_r^T``, via the Hadamard-product normal
    equations ``(A^T A) * (B^T B)``."""
    rank = Ared.shape[-1]
    A = _unit_columns(np.einsum("pir,prq->piq", Ur, Ared))
    B = _unit_columns(np.einsum("pjr,prq->pjq", Vr, Bred))
    gram = np.einsum("pir,piq->prq", A, A) * np.einsum("pjr,pjq->prq", B, B)
    rhs = np.einsum("pir,pijs,pjr->prs", A, T, B)
    gram[~ok] = np.eye(rank)
    try:
        W = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        W = np.stack([np.linalg.lstsq(g, r, rcond=None)[0] for g, r in zip(gram, rhs)])
    lam = np.linalg.norm(W, axis=2)
    safe = np.where(lam > 0, lam, 1.0)
    C = np.swapaxes(W / safe[:, :, None], 1, 2)
    return lam, A, B, C


def _cosines(E: np.ndarray) -> np.ndarray:
    En = E / np.linalg.norm(E, axis=-2, keepdims=True)
    return np.abs(np.einsum("...ir,...iq->...rq", En.conj(), En))


def _has_parallel(E: np.ndarray) -> np.ndarray:
    cos = _cosines(E)
    r = E.shape[-1]
    cos[..., np.arange(r), np.arange(r)] = 0.0
    return np.any(cos >= PARALLEL_COS, axis=(-2, -1))


def _merge(label: np.ndarray, i: int, j: int) -> None:
    label[label == label[j]] = label[i]


def _clusters(w: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Label eigenpairs so that conjugate pairs, numerically repeated eigenvalues
    and near-parallel eigenvectors share a label."""
    r = len(w)
    label = np.arange(r)
    cos = _cosines(E)
    for i in range(r):
        for j in range(i + 1, r):
            conj = w[i].imag != 0 and w[j] == np.conj(w[i])
            repeated = abs(w[i] - w[j]) <= PAIR_RTOL * max(abs(w[i]), abs(w[j]))
            if conj or repeated or cos[i, j] >= PARALLEL_COS:
                _merge(label, i, j)
    return label


def _span(E: np.ndarray, size: int) -> np.ndarray:
    """Orthonormal basis of the real invariant subspace spanned by eigenvectors ``E``."""
    basis, _, _ = np.linalg.svd(np.hstack([E.real, E.imag]), full_matrices=False)
    return basis[:, :size]


def _resolve_clusters(w1, E1, w2, E2, s):
    """Factor columns (in range-of-``T_v`` coordinates) for a degenerate spectrum.

    Each complex-conjugate pair, group of repeated eigenvalues, or set of
    near-parallel eigenvectors spans a real invariant subspace in both
    eigen-systems without well-determined eigenvectors inside it. Those
    columns are fixed by the SVD of ``T_v`` restricted to the pair of
    subspaces, which is exact when the cluster's slices are proportional.
    Returns ``None`` when the two spectra cannot be matched cluster by cluster.
    """
    label = _clusters(w1, E1)
    partner = label[np.argmin(np.abs(w1[None, :] - w2[:, None]), axis=1)]
    # clusters found only in the second system merge the matching first-system ones
    label2 = _clusters(w2, E2)
    for i in range(len(w2)):
        for j in range(i + 1, len(w2)):
            if label2[i] == label2[j] and partner[i] != partner[j]:
                a, b = partner[i], partner[j]
                label[label == b] = a
                partner[partner == b] = a
    A_cols, B_cols = [], []
    for c in np.unique(label):
        q1 = np.flatnonzero(label == c)
        q2 = np.flatnonzero(partner == c)
        if q1.size != q2.size:
            return None
        if q1.size == 1 and w1[q1[0]].imag == 0:
            A_cols.append(E1[:, q1].real)
            B_cols.append(E2[:, q2].real)
            continue
        Qa = _span(E1[:, q1], q1.size)
        Qb = _span(E2[:, q2], q2.size)
        Pa, _, Pbt = np.linalg.svd(Qa.T @ (s[:, None] * Qb))
        A_cols.append(Qa @ Pa)
        B_cols.append(Qb @ Pbt.T)
    return np.hstack(A_cols), np.hstack(B_cols)


def _unit_columns(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms > 0, norms, 1.0)


def _tv_ranks(T: np.ndarray, V: np.ndarray) -> np.ndarray:
    S = np.linalg.svd(np.einsum("pijs,ps->pij", T, V), compute_uv=False)
    return np.sum(S > PINV_RTOL * S[:, :1], axis=1)


def jenrich_batch(tensors: np.ndarray, seeds: Sequence[SeedLike], retries: int = MAX_RETRIES) -> BatchCp:
    """Decompose a stack of tensors ``(P, m, n, k)``.

    Tensor ``p`` draws its random contraction vectors from ``seeds[p]`` and is
    re-drawn up to ``retries`` times when its eigensystem is degenerate.
    Groups that stay degenerate are flagged in ``failed`` with zero factors.
    Near-zero tensors get rank 0.
    """
    T = np.asarray(tensors, dtype=float)
    if T.ndim != 4:
        raise DimensionMismatch(f"expected (P, m, n, k), got {T.shape}")
    P, m, n, k = T.shape
    if len(seeds) != P:
        raise DimensionMismatch("one seed per tensor is required")
    R = min(m, n)
    lam = np.zeros((P, R))
    A = np.zeros((P, m, R))
    B = np.zeros((P, n, R))
    C = np.zeros((P, k, R))
    ranks = np.zeros(P, dtype=int)

    norms = np.sqrt(np.einsum("pijs,pijs->p", T, T))
    pending = np.flatnonzero(norms >= ZERO_RTOL * m * n * k)
    for attempt in range(retries + 1):
        if pending.size == 0:
            break
        uv = [random_unit_pair(seeds[p], attempt, k) for p in pending]
        U = np.array([u for u, _ in uv]).reshape(-1, k)
        V = np.array([v for _, v in uv]).reshape(-1, k)
        tv_rank = _tv_ranks(T[pending], V)
        still = []
        for r in np.unique(tv_rank):
            sel = np.flatnonzero(tv_rank == r)
            if r == 0:
                still.extend(pending[sel])
                continue
            idx = pending[sel]
            l, a, b, c, ok = _core(T[idx], U[sel], V[sel], int(r))
            order = np.argsort(-np.abs(l), axis=1, kind="stable")
            l = np.take_along_axis(l, order, axis=1)
            a = np.take_along_axis(a, order[:, None, :], axis=2)
            b = np.take_along_axis(b, order[:, None, :], axis=2)
            c = np.take_along_axis(c, order[:, None, :], axis=2)
            good = idx[ok]
            lam[good, :r] = l[ok]
            A[good, :, :r] = a[ok]
            B[good, :, :r] = b[ok]
            C[good, :, :r] = c[ok]
            ranks[good] = r
            still.extend(idx[~ok])
        pending = np.array(sorted(still), dtype=int)

    failed = np.zeros(P, dtype=bool)
    failed[pending] = True
    return BatchCp(lam, A, B, C, ranks, failed)


def jenrich_decompose(t: np.ndarray, rng_seed: SeedLike = 0, retries: int = MAX_RETRIES) -> CpFactors:
    """CP-decompose a 3-way tensor with Jenrich's algorithm.

    Parameters
    ----------
    t : ndarray, shape (m, n, k)
        Requires ``m, n, k >= 2``.
    rng_seed : int or sequence of int
        Seeds the two random contraction vectors.
    retries : int
        Reseeded attempts after a degenerate eigensystem.

    Returns
    -------
    CpFactors
        At most ``min(m, n)`` components, sorted by decreasing ``|lambda|``.
        A zero tensor yields empty factors.

    Raises
    ------
    DegenerateEigensystem
        If every attempt produced complex or repeated eigenvalues.
    """
    t = _check_tensor(t)
    if min(t.shape) < 2:
        raise DimensionMismatch(f"Jenrich needs every mode of size >= 2, got {t.shape}")
    batch = jenrich_batch(t[None], [rng_seed], retries=retries)
    if batch.failed[0]:
        raise DegenerateEigensystem(f"degenerate eigensystem after {retries} retries (seed {rng_seed!r})")
    if batch.ranks[0] == 0:
        return CpFactors.empty(t.shape)
    return batch.factors(0)


def truncate_rank(f: CpFactors, ell: int) -> CpFactors:
    """Keep the ``ell`` components with the largest ``|lambda|``."""
    if ell < 1:
        raise ValueError(f"rank must be >= 1, got {ell}")
    if ell >= f.rank:
        return f
    keep = np.sort(np.argsort(-np.abs(f.lambdas), kind="stable")[:ell])
    return CpFactors(f.lambdas[keep], f.A[:, keep], f.B[:, keep], f.C[:, keep])


def reconstruct_cp(f: CpFactors, dims: tuple[int, int, int] | None = None) -> np.ndarray:
    if dims is not None and tuple(dims) != f.dims:
        raise DimensionMismatch(f"factors have dims {f.dims}, requested {tuple(dims)}")
    return np.einsum("r,ir,jr,sr->ijs", f.lambdas, f.A, f.B, f.C)


def reconstruct_batch(batch: BatchCp, ell: int | None = None) -> np.ndarray:
    """Rebuild every tensor of a batch, optionally from its ``ell`` leading components."""
    lam = batch.lambdas
    if ell is not None:
        lam = lam.copy()
        lam[:, ell:] = 0.0
    return np.einsum("pr,pir,pjr,psr->pijs", lam, batch.A, batch.B, batch.C)


def lowrank_approximation(
    tensors: np.ndarray, ell: int, seeds: Sequence[SeedLike], retries: int = MAX_RETRIES
) -> tuple[np.ndarray, np.ndarray]:
    """Rank-``ell`` CP approximations of a batch of tensors.

    ``ell`` is capped at ``min(m, n)``. Tensors whose decomposition stays
    degenerate are returned unchanged. Returns the approximations and the
    boolean mask of those fallbacks.
    """
    if ell < 1:
        raise ValueError(f"rank must be >= 1, got {ell}")
    T = np.asarray(tensors, dtype=float)
    batch = jenrich_batch(T, seeds, retries=retries)
    L = reconstruct_batch(batch, min(ell, T.shape[1], T.shape[2]))
    L[batch.failed] = T[batch.failed]
    return L, batch.failed


def effective_rank(ell: int, patch_dims: tuple[int, int]) -> int:
    return min(ell, *patch_dims)
