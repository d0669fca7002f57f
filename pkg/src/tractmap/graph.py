"""Distance-graph construction and the mapping loss.

Graphs are represented only by their dense adjacency matrix of pairwise
streamline distances. A mapping is an integer array ``q`` of length N where
``q[i]`` is the target streamline assigned to source streamline ``i``; it
stands for the binary N x M matrix Q with ``Q[i, q[i]] == 1``, so that
``(Q B Q^T)[i, j] == B[q[i], q[j]]``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .geometry import GeometryError, Tractography, _pairwise


def check_distance_matrix(values, name: str = "distance matrix") -> np.ndarray:
    """Return ``values`` as a float64 array after checking it is a valid
    distance matrix: square, symmetric, zero diagonal, finite, non-negative."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise GeometryError(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise GeometryError(f"{name} has non-finite entries")
    if np.any(m < 0):
        raise GeometryError(f"{name} has negative entries")
    if np.any(np.diag(m) != 0):
        raise GeometryError(f"{name} has a non-zero diagonal")
    if not np.array_equal(m, m.T):
        raise GeometryError(f"{name} is not symmetric")
    return m


def as_mapping(q, n_source: int | None = None, n_target: int | None = None) -> np.ndarray:
    arr = np.asarray(q)
    if arr.ndim != 1 or arr.size == 0:
        raise GeometryError(f"mapping must be a non-empty 1-d sequence, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise GeometryError("mapping entries must be integers")
    arr = arr.astype(np.int64)
    if n_source is not None and arr.size != n_source:
        raise GeometryError(f"mapping has {arr.size} sources, expected {n_source}")
    if arr.min() < 0 or (n_target is not None and arr.max() >= n_target):
        raise GeometryError(f"mapping targets must lie in [0, {n_target})")
    return arr


class _PackedPoints:
    """All vertices of a tractography in one array, with segment offsets."""

    def __init__(self, t: Tractography):
        self.points = np.concatenate(t.streamlines, axis=0)
        self.counts = np.array([len(s) for s in t.streamlines])
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])

    def mam_row(self, s: np.ndarray, first: int = 0) -> np.ndarray:
        """MAM distances from ``s`` to streamlines ``first, first+1, ...``."""
        start = self.starts[first]
        d = _pairwise(s, self.points[start:])
        offsets = self.starts[first:] - start
        n = len(s)
        # s -> each target: closest target vertex for every vertex of s, laid
        # out one contiguous segment per target
        fmin = np.ascontiguousarray(np.minimum.reduceat(d, offsets, axis=1).T).ravel()
        forward = np.add.reduceat(fmin, np.arange(0, fmin.size, n)) / n
        # each target -> s
        backward = np.add.reduceat(d.min(axis=0), offsets) / self.counts[first:]
        # both directions use the same 1-d summation, so the result does not
        # depend on which streamline plays the role of s
        return 0.5 * (forward + backward)


def _n_workers(threads: int | None) -> int:
    if threads is None:
        return os.cpu_count() or 1
    return max(1, int(threads))


def distance_matrix(t: Tractography, threads: int | None = 1) -> np.ndarray:
    """Pairwise MAM distance matrix of a tractography.

    Rows are computed independently (optionally on a thread pool) and only the
    upper triangle is evaluated, then mirrored, so the output is exactly
    symmetric and does not depend on the number of threads.
    """
    packed = _PackedPoints(t)
    n = len(t)
    out = np.zeros((n, n))

    def fill(i):
        out[i, i:] = packed.mam_row(t[i], first=i)

    workers = _n_workers(threads)
    if workers == 1:
        for i in range(n):
            fill(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n)))
    np.fill_diagonal(out, 0.0)
    iu = np.triu_indices(n, 1)
    out.T[iu] = out[iu]
    return out


def cross_distance(ta: Tractography, tb: Tractography, threads: int | None = 1) -> np.ndarray:
    """N x M matrix of MAM distances between streamlines of ``ta`` and ``tb``."""
    packed = _PackedPoints(tb)
    out = np.empty((len(ta), len(tb)))

    def fill(i):
        out[i] = packed.mam_row(ta[i])

    workers = _n_workers(threads)
    if workers == 1:
        for i in range(len(ta)):
            fill(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(len(ta))))
    return out


def _check_dims(a: np.ndarray, b: np.ndarray, q: np.ndarray):
    if q.shape != (a.shape[0],):
        raise GeometryError(
            f"mapping length {q.shape[0] if q.ndim else 0} does not match source size {a.shape[0]}")
    if q.min() < 0 or q.max() >= b.shape[0]:
        raise GeometryError(f"mapping targets must lie in [0, {b.shape[0]})")


def squared_loss(a, b, q) -> float:
    """``||A - Q B Q^T||_F ** 2``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    q = as_mapping(q)
    _check_dims(a, b, q)
    return float(batch_squared_losses(a, b, q[None, :])[0])


def mapping_loss(a, b, q) -> float:
    """Frobenius norm of ``A - Q B Q^T`` for the mapping ``q``."""
    return math.sqrt(squared_loss(a, b, q))


def batch_squared_losses(a: np.ndarray, b: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Squared losses of many mappings at once; ``qs`` has shape (k, N).

    Each row is reduced on its own, so the value for a given mapping does not
    depend on which batch it was evaluated in.
    """
    n = a.shape[0]
    r = a[None, :, :] - b[qs[:, :, None], qs[:, None, :]]
    r = r.reshape(qs.shape[0], n * n)
    return np.einsum("ij,ij->i", r, r)


def normalized_loss(loss: float, n_source: int) -> float:
    if n_source < 1:
        raise GeometryError(f"n_source must be >= 1, got {n_source}")
    return loss / n_source


def remap_delta(a, b, q, i: int, j_new: int) -> float:
    """Change in squared loss when source ``i`` is re-mapped to ``j_new``.

    Only row/column ``i`` of ``A - Q B Q^T`` changes; off-diagonal terms are
    counted twice (A and B are symmetric), the diagonal term once. O(N).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    q = as_mapping(q)
    _check_dims(a, b, q)
    n, m = a.shape[0], b.shape[0]
    if not 0 <= i < n:
        raise GeometryError(f"source index {i} out of range [0, {n})")
    if not 0 <= j_new < m:
        raise GeometryError(f"target index {j_new} out of range [0, {m})")
    j_old = q[i]
    if j_new == j_old:
        return 0.0
    old = a[i] - b[j_old, q]
    new = a[i] - b[j_new, q]
    old[i] = 0.0
    new[i] = 0.0
    diag = (a[i, i] - b[j_new, j_new]) ** 2 - (a[i, i] - b[j_old, j_old]) ** 2
    return float(2.0 * (np.dot(new, new) - np.dot(old, old)) + diag)


def remap_deltas(a: np.ndarray, b: np.ndarray, q: np.ndarray, i: int) -> np.ndarray:
    """:func:`remap_delta` for every target at once (length-M vector)."""
    j_old = q[i]
    cols = b[:, q]
    row = a[i][None, :] - cols
    row[:, i] = 0.0
    sq = np.einsum("ij,ij->i", row, row)
    diag = (a[i, i] - np.diag(b)) ** 2
    delta = 2.0 * (sq - sq[j_old]) + (diag - diag[j_old])
    delta[j_old] = 0.0
    return delta
