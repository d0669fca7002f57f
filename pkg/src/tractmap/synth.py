"""Synthetic bundles and subject pairs with known streamline correspondence.

A bundle is built from a centerline in three layers:

* a per-streamline *shape*: a smooth lateral deformation of the centerline
  whose amplitude grows along the curve (a fanning bundle), scaled by
  ``spread``. Shapes are what make individual streamlines identifiable.
* per-vertex isotropic Gaussian jitter of standard deviation ``jitter_sigma``.
* a global ``offset``.

A subject pair shares the shapes between subjects but draws fresh jitter for
each, so the twin of source streamline ``k`` is the target streamline built
from the same shape. With ``spread=0`` every streamline is the centerline
plus jitter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, Tractography, as_point3, as_streamline
from .rng import make_rng


def default_centerline(radius: float = 40.0, n_points: int = 20) -> np.ndarray:
    """Quarter-circle arc of the given radius in the x-z plane."""
    theta = np.linspace(0.0, np.pi / 2, n_points)
    return as_streamline(np.column_stack(
        [radius * np.cos(theta), np.zeros(n_points), radius * np.sin(theta)]))


@dataclass(frozen=True, eq=False)
class BundleSpec:
    centerline: np.ndarray = None
    n_streamlines: int = 60
    jitter_sigma: float = 1.0
    seed: int = 42
    offset: tuple = (0.0, 0.0, 0.0)
    spread: float = 0.0

    def __post_init__(self):
        c = default_centerline() if self.centerline is None else as_streamline(self.centerline)
        object.__setattr__(self, "centerline", c)
        object.__setattr__(self, "offset", as_point3(self.offset, "offset"))
        if self.n_streamlines < 1:
            raise GeometryError(f"n_streamlines must be >= 1, got {self.n_streamlines}")
        if self.jitter_sigma < 0:
            raise GeometryError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if self.spread < 0:
            raise GeometryError(f"spread must be >= 0, got {self.spread}")


def _frame(centerline: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors per vertex, orthogonal to the local tangent."""
    n = len(centerline)
    if n == 1:
        return np.tile([1.0, 0, 0], (1, 1)), np.tile([0, 1.0, 0], (1, 1))
    tangent = np.gradient(centerline, axis=0)
    norm = np.linalg.norm(tangent, axis=1, keepdims=True)
    tangent = np.divide(tangent, norm, out=np.tile([1.0, 0, 0], (n, 1)), where=norm > 0)
    ref = np.where(np.abs(tangent[:, 1:2]) < 0.9, [[0, 1.0, 0]], [[1.0, 0, 0]])
    u = np.cross(tangent, ref)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(tangent, u)
    return u, v


def _shapes(centerline: np.ndarray, n: int, spread: float, rng: np.random.Generator) -> np.ndarray:
    """(n, n_points, 3) templates: centerline plus a smooth fanning deformation."""
    n_pts = len(centerline)
    if spread == 0:
        return np.broadcast_to(centerline, (n, n_pts, 3)).copy()
    u, v = _frame(centerline)
    t = np.linspace(0.0, 1.0, n_pts)
    base = rng.normal(scale=0.5 * spread, size=(n, 2))
    fan = rng.normal(scale=spread, size=(n, 2))
    bend = rng.normal(scale=0.5 * spread, size=(n, 2))
    # lateral coordinates along the curve: offset + linear fan + mid-curve bow
    profile = (base[:, None, :] + fan[:, None, :] * t[None, :, None]
               + bend[:, None, :] * np.sin(np.pi * t)[None, :, None])
    lateral = profile[..., :1] * u[None] + profile[..., 1:] * v[None]
    return centerline[None] + lateral


def _realize(shapes: np.ndarray, sigma: float, offset, rng) -> list[np.ndarray]:
    noise = rng.normal(scale=sigma, size=shapes.shape) if sigma > 0 else 0.0
    pts = shapes + noise + np.asarray(offset)
    return [pts[k] for k in range(len(pts))]


def generate_bundle(spec: BundleSpec) -> Tractography:
    """Jittered copies of ``spec.centerline`` (deterministic for a fixed seed)."""
    rng = make_rng(spec.seed, "bundle")
    shapes = _shapes(spec.centerline, spec.n_streamlines, spec.spread, rng)
    return Tractography(_realize(shapes, spec.jitter_sigma, spec.offset, rng), name="bundle")


def random_centerline(rng: np.random.Generator, n_points: int = 20) -> np.ndarray:
    """Circular arc with random radius, sweep and orientation, through the origin."""
    radius = rng.uniform(20.0, 60.0)
    sweep = rng.uniform(np.pi / 6, np.pi / 2)
    start = rng.uniform(0, 2 * np.pi)
    theta = start + np.linspace(0.0, sweep, n_points)
    arc = np.column_stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(n_points)])
    arc -= arc[n_points // 2]
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return arc @ q.T


@dataclass
class SubjectPair:
    source: Tractography
    target: Tractography
    truth: np.ndarray
    target_tract: np.ndarray

    def __iter__(self):
        return iter((self.source, self.target, self.truth))


def generate_subject_pair(spec: BundleSpec, distractors: int = 0,
                          displacement=(0.0, 0.0, 0.0), distractor_extent: float = 40.0,
                          distractor_bundle_size: int = 30) -> SubjectPair:
    """Source tract, whole target set, and ground-truth mapping.

    The target holds the homologous bundle (same shapes, fresh jitter, moved
    by ``displacement``) and ``distractors`` streamlines drawn from unrelated
    bundles, in shuffled order. Distractor bundles are centered uniformly in
    a cube of half-width ``distractor_extent`` around the bundle.
    """
    if distractors < 0:
        raise GeometryError(f"distractors must be >= 0, got {distractors}")
    if distractor_bundle_size < 1:
        raise GeometryError("distractor_bundle_size must be >= 1")
    displacement = np.asarray(as_point3(displacement, "displacement"))
    rng = make_rng(spec.seed, "subject-pair")
    shapes = _shapes(spec.centerline, spec.n_streamlines, spec.spread, rng)
    source = _realize(shapes, spec.jitter_sigma, spec.offset, rng)
    twin = _realize(shapes, spec.jitter_sigma, np.asarray(spec.offset) + displacement, rng)

    center = spec.centerline.mean(axis=0) + np.asarray(spec.offset) + displacement
    extra: list[np.ndarray] = []
    n_pts = len(spec.centerline)
    while len(extra) < distractors:
        k = min(distractor_bundle_size, distractors - len(extra))
        line = random_centerline(rng, n_pts)
        where = center + rng.uniform(-distractor_extent, distractor_extent, size=3)
        extra += _realize(_shapes(line, k, spec.spread, rng), spec.jitter_sigma, where, rng)

    # shuffle so that position in the target carries no information
    pool = twin + extra
    order = rng.permutation(len(pool))
    where_is = np.empty_like(order)
    where_is[order] = np.arange(len(pool))
    truth = where_is[: spec.n_streamlines].astype(np.int64)
    return SubjectPair(
        source=Tractography(source, name="source_tract"),
        target=Tractography([pool[k] for k in order], name="target_full"),
        truth=truth,
        target_tract=np.sort(truth),
    )
