"""Streamline value types, the MAM distance and vertex voxelization.

A streamline is stored as a float64 array of shape ``(n_points, 3)`` in
millimeters. A :class:`Tractography` is an immutable, indexed collection of
them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised on invalid streamline data or geometric parameters."""


def as_point3(p, name: str = "point") -> tuple[float, float, float]:
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape != (3,):
        raise GeometryError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} has non-finite components: {arr.tolist()}")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


def as_voxel_size(voxel_size) -> tuple[float, float, float]:
    vs = as_point3(voxel_size, "voxel_size")
    if min(vs) <= 0:
        raise GeometryError(f"voxel_size components must be > 0, got {vs}")
    return vs


def as_streamline(points) -> np.ndarray:
    """Validate and return a read-only ``(n, 3)`` float64 array."""
    arr = np.array(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"streamline must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise GeometryError("streamline is empty")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("streamline contains non-finite coordinates")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Tractography:
    """Indexed collection of streamlines.

    Parameters
    ----------
    streamlines : sequence of array-like
        Each item is converted with :func:`as_streamline`.
    voxel_size : 3-tuple, optional
        Millimeters per voxel, as found in a file header.
    name : str, optional
    metadata : dict
        Opaque extras (e.g. per-point scalars read from a .trk file).
    """

    streamlines: tuple[np.ndarray, ...]
    voxel_size: tuple[float, float, float] | None = None
    name: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        sl = tuple(as_streamline(s) for s in self.streamlines)
        if not sl:
            raise GeometryError("tractography must contain at least one streamline")
        object.__setattr__(self, "streamlines", sl)
        if self.voxel_size is not None:
            object.__setattr__(self, "voxel_size", as_voxel_size(self.voxel_size))

    def __len__(self) -> int:
        return len(self.streamlines)

    def __getitem__(self, i):
        return self.streamlines[i]

    def __iter__(self):
        return iter(self.streamlines)

    def __eq__(self, other):
        if not isinstance(other, Tractography):
            return NotImplemented
        return (
            len(self) == len(other)
            and self.voxel_size == other.voxel_size
            and self.name == other.name
            and all(np.array_equal(a, b) for a, b in zip(self, other))
        )

    __hash__ = None

    def subset(self, indices: Iterable[int], name: str | None = None) -> "Tractography":
        return Tractography(
            [self.streamlines[int(i)] for i in indices],
            voxel_size=self.voxel_size,
            name=name if name is not None else self.name,
        )

    def replace_streamlines(self, streamlines: Sequence) -> "Tractography":
        return Tractography(streamlines, voxel_size=self.voxel_size, name=self.name,
                            metadata=dict(self.metadata))


@dataclass(frozen=True)
class VoxelSet:
    voxels: frozenset
    voxel_size: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "voxel_size", as_voxel_size(self.voxel_size))
        object.__setattr__(self, "voxels", frozenset(self.voxels))

    def __len__(self) -> int:
        return len(self.voxels)


def _pairwise(s: np.ndarray, s2: np.ndarray) -> np.ndarray:
    diff = s[:, None, :] - s2[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def point_to_streamline_distance(x, s) -> float:
    """Distance from ``x`` to the closest vertex of ``s``.

    Only vertices are considered, never the segments between them, so the
    result depends on how densely ``s`` is sampled (see :func:`resample`).
    """
    x = np.asarray(as_point3(x, "x"))
    s = as_streamline(s)
    return float(_pairwise(x[None, :], s).min())


def mam_distance(s, s2) -> float:
    """Mean of closest-vertex distances, symmetrized over both directions.

    >>> mam_distance([[0, 0, 0], [1, 0, 0]], [[0, 1, 0], [1, 1, 0]])
    1.0
    """
    s = as_streamline(s)
    s2 = as_streamline(s2)
    d = _pairwise(s, s2)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()).item()


def resample(s, n_points: int) -> np.ndarray:
    """Resample ``s`` to ``n_points`` vertices evenly spaced in arc length."""
    s = as_streamline(s)
    if n_points < 1:
        raise GeometryError(f"n_points must be >= 1, got {n_points}")
    seg = np.linalg.norm(np.diff(s, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] == 0:
        return as_streamline(np.repeat(s[:1], n_points, axis=0))
    targets = np.linspace(0.0, arc[-1], n_points)
    out = np.column_stack([np.interp(targets, arc, s[:, k]) for k in range(3)])
    return as_streamline(out)


def voxel_indices(points: np.ndarray, voxel_size) -> np.ndarray:
    vs = np.asarray(as_voxel_size(voxel_size))
    return np.floor(np.asarray(points, dtype=np.float64) / vs).astype(np.int64)


def voxelize(t: Tractography, voxel_size) -> VoxelSet:
    """Voxels that contain at least one streamline vertex.

    Voxel index along each axis is ``floor(coordinate / voxel_size)``.
    Segments between vertices are not rasterized.
    """
    vs = as_voxel_size(voxel_size)
    pts = np.concatenate(t.streamlines, axis=0)
    idx = np.unique(voxel_indices(pts, vs), axis=0)
    return VoxelSet(frozenset(map(tuple, idx.tolist())), vs)
