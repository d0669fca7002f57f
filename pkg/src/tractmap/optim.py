"""Solvers for the tractography mapping problem.

Everything here works on distance matrices and integer mappings (see
:mod:`tractmap.graph`). Comparisons between candidate mappings are made on
the squared loss; square roots are taken only for reporting.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Tractography
from .graph import (
    _PackedPoints,
    _check_dims,
    as_mapping,
    batch_squared_losses,
    check_distance_matrix,
    distance_matrix,
    remap_deltas,
    squared_loss,
)
from .rng import make_rng

log = logging.getLogger(__name__)

DEFAULT_BRUTE_FORCE_BUDGET = 10**6
MAX_MATCHING_SIZE = 8


class BudgetExceeded(RuntimeError):
    pass


# -- superset heuristic --------------------------------------------------------

def medoid(d) -> int:
    """Index minimizing the sum of distances to all others (lowest on ties)."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] == 0:
        raise GeometryError("medoid of an empty distance matrix")
    return int(np.argmin(d.sum(axis=1)))


@dataclass(frozen=True)
class SuperSetFilter:
    medoid_index: int
    radius: float
    alpha: float = 3.0
    indices: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise GeometryError(f"alpha must be > 0, got {self.alpha}")
        if self.radius < 0:
            raise GeometryError(f"radius must be >= 0, got {self.radius}")

    @property
    def threshold(self) -> float:
        return self.alpha * self.radius


def superset(full: Tractography, tract_indices, alpha: float = 3.0,
             threads: int | None = 1) -> SuperSetFilter:
    """Compute the medoid/radius superset of a tract inside ``full``.

    The medoid is taken over the tract's own distance matrix; the radius is
    its largest distance to a tract member, and every streamline of ``full``
    within ``alpha * radius`` of the medoid is retained.
    """
    idx = np.asarray(list(tract_indices), dtype=np.int64)
    if idx.size == 0:
        raise GeometryError("tract is empty")
    if idx.min() < 0 or idx.max() >= len(full):
        raise GeometryError(f"tract indices must lie in [0, {len(full)})")
    if not alpha > 0:
        raise GeometryError(f"alpha must be > 0, got {alpha}")
    tract = full.subset(idx)
    m = idx[medoid(distance_matrix(tract, threads=threads))]
    # radius and filtering use the same distance row so members at exactly
    # the radius always pass when alpha >= 1
    row = _PackedPoints(full).mam_row(full[m])
    row[m] = 0.0
    radius = float(row[idx].max())
    keep = np.flatnonzero(row <= alpha * radius)
    return SuperSetFilter(medoid_index=int(m), radius=radius, alpha=alpha, indices=keep)


def superset_filter(full: Tractography, tract_indices, alpha: float = 3.0) -> np.ndarray:
    """Indices of ``full`` within ``alpha`` times the tract radius of its medoid."""
    return superset(full, tract_indices, alpha).indices


# -- initialization ------------------------------------------------------------

def nn_init(cross) -> np.ndarray:
    """1-nearest-neighbour mapping from an N x M cross-distance matrix."""
    c = np.asarray(cross, dtype=np.float64)
    if c.ndim != 2 or c.size == 0:
        raise GeometryError(f"cross-distance matrix must be non-empty 2-d, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise GeometryError("cross-distance matrix has non-finite entries")
    return np.argmin(c, axis=1).astype(np.int64)


def random_init(n_source: int, n_target: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n_target, size=n_source).astype(np.int64)


# -- local moves ---------------------------------------------------------------

def greedy_remap(a, b, q, i: int) -> tuple[int, float]:
    """Best re-mapping of source ``i``: ``(target, squared-loss delta)``.

    Returns ``(q[i], 0.0)`` when no target strictly decreases the loss.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    q = as_mapping(q)
    _check_dims(a, b, q)
    if not 0 <= i < len(q):
        raise GeometryError(f"source index {i} out of range [0, {len(q)})")
    delta = remap_deltas(a, b, q, i)
    j = int(np.argmin(delta))
    if delta[j] < 0:
        return j, float(delta[j])
    return int(q[i]), 0.0


def _uphill_target(delta: np.ndarray, current: int, temperature: float, rng,
                   mode: str) -> int:
    # delta has no negative entry here; current target is excluded
    m = len(delta)
    if mode == "boltzmann" and temperature > 0:
        w = np.exp(-(delta - delta.min()) / temperature)
        w[current] = 0.0
        total = w.sum()
        if total > 0:
            return int(rng.choice(m, p=w / total))
    j = int(rng.integers(m - 1))
    return j + (j >= current)


def _propose(a, b, q, i, rng, temperature: float, uphill: str = "boltzmann",
             repair: bool = True) -> tuple[np.ndarray, float]:
    """Stochastic-greedy proposal for source ``i``.

    ``i`` moves to the target with the largest loss reduction. When no
    target improves, another target is drawn instead (Boltzmann-weighted by
    its delta, or uniformly) so the annealer has an uphill move to judge.
    With ``repair``, if the chosen target was already used by other sources,
    the best greedy re-mapping among those sources is applied on top, which
    turns a collision into a swap. Returns the proposal and its squared-loss
    delta.
    """
    delta = remap_deltas(a, b, q, i)
    j = int(np.argmin(delta))
    if not delta[j] < 0:
        j = _uphill_target(delta, int(q[i]), temperature, rng, uphill)
    total = float(delta[j])
    new = q.copy()
    new[i] = j
    if repair:
        best = (0.0, -1, -1)
        for k in np.flatnonzero(q == j):
            if k == i:
                continue
            dk = remap_deltas(a, b, new, k)
            jk = int(np.argmin(dk))
            if dk[jk] < best[0]:
                best = (float(dk[jk]), int(k), jk)
        if best[1] >= 0:
            total += best[0]
            new[best[1]] = best[2]
    return new, total


# -- simulated annealing -------------------------------------------------------

@dataclass(frozen=True)
class AnnealSchedule:
    """Parameters of the annealing run.

    ``initial_temperature=None`` means ``temperature_scale * L0**2 / N`` with
    L0 the loss of the starting mapping. ``uphill`` selects how a worsening
    target is drawn when no move improves ("boltzmann" or "random").
    ``greedy_only`` uses the plain greedy re-mapping and never accepts an
    uphill move; ``repair`` and ``uphill`` are then ignored.
    """

    iterations: int = 1000
    initial_temperature: float | None = None
    cooling: float = 0.995
    rng_seed: int = 42
    greedy_only: bool = False
    repair: bool = True
    uphill: str = "boltzmann"
    temperature_scale: float = 2.0

    def __post_init__(self):
        if self.iterations < 0:
            raise GeometryError(f"iterations must be >= 0, got {self.iterations}")
        if not 0 < self.cooling < 1:
            raise GeometryError(f"cooling must be in (0, 1), got {self.cooling}")
        if self.uphill not in ("boltzmann", "random"):
            raise GeometryError(f"uphill must be 'boltzmann' or 'random', got {self.uphill!r}")
        if not self.temperature_scale > 0:
            raise GeometryError(f"temperature_scale must be > 0, got {self.temperature_scale}")
        if self.initial_temperature is not None and not self.initial_temperature > 0:
            raise GeometryError(
                f"initial_temperature must be > 0, got {self.initial_temperature}")


@dataclass
class AnnealTrace:
    """Per-iteration record; index 0 is the initial state.

    ``losses`` hold the loss of the current state, ``best_losses`` the best
    loss seen so far. ``mapping`` is the best mapping found.
    """

    losses: np.ndarray
    best_losses: np.ndarray
    accepted: np.ndarray
    temperatures: np.ndarray
    n_source: int
    mapping: np.ndarray
    loss: float
    initial_mapping: np.ndarray

    @property
    def normalized_losses(self) -> np.ndarray:
        return self.losses / self.n_source

    @property
    def best_normalized_losses(self) -> np.ndarray:
        return self.best_losses / self.n_source

    def __len__(self) -> int:
        return len(self.losses)

    def records(self):
        for k in range(len(self.losses)):
            yield k, float(self.losses[k]), float(self.losses[k] / self.n_source), bool(self.accepted[k])


def anneal(a, b, q0, sched: AnnealSchedule | None = None) -> AnnealTrace:
    """Simulated annealing with a stochastic-greedy transition.

    Each iteration picks a source streamline uniformly at random and
    proposes its greedy re-mapping (see :func:`_propose`). Proposals that do
    not increase the squared loss are always taken; others are accepted with
    probability ``exp(-delta / T)``. T is multiplied by ``sched.cooling``
    after every iteration. The returned trace has ``iterations + 1`` entries
    and carries the best mapping seen, not the last one.
    """
    sched = sched or AnnealSchedule()
    a = check_distance_matrix(a, "source distance matrix")
    b = check_distance_matrix(b, "target distance matrix")
    q = as_mapping(q0).copy()
    _check_dims(a, b, q)
    n, m = a.shape[0], b.shape[0]
    rng = make_rng(sched.rng_seed, "anneal")

    sq = squared_loss(a, b, q)
    best_q, best_sq = q.copy(), sq
    temperature = sched.initial_temperature
    if temperature is None:
        temperature = sched.temperature_scale * sq / n if sq > 0 else 1e-12

    iters = sched.iterations
    losses = np.empty(iters + 1)
    best_losses = np.empty(iters + 1)
    accepted = np.zeros(iters + 1, dtype=bool)
    temps = np.empty(iters + 1)
    losses[0] = best_losses[0] = math.sqrt(sq)
    temps[0] = temperature
    accepted[0] = True

    for k in range(1, iters + 1):
        i = int(rng.integers(n))
        ok = False
        if sched.greedy_only:
            delta = remap_deltas(a, b, q, i)
            j = int(np.argmin(delta))
            if delta[j] < 0:
                ok = True
                proposal = q.copy()
                proposal[i] = j
        elif m > 1:
            proposal, delta = _propose(a, b, q, i, rng, temperature, sched.uphill, sched.repair)
            if delta <= 0:
                ok = True
            elif temperature > 0:
                ok = rng.random() < math.exp(-delta / temperature)
        if ok:
            q = proposal
            # recomputed rather than accumulated so that exact optima report
            # a loss of exactly zero
            sq = squared_loss(a, b, q)
            if sq < best_sq:
                best_sq, best_q = sq, q.copy()
        temperature *= sched.cooling
        losses[k] = math.sqrt(sq)
        best_losses[k] = math.sqrt(best_sq)
        accepted[k] = ok
        temps[k] = temperature

    log.debug("anneal: loss %.6g -> best %.6g over %d iterations",
              losses[0], best_losses[-1], iters)
    return AnnealTrace(
        losses=losses, best_losses=best_losses, accepted=accepted,
        temperatures=temps, n_source=n, mapping=best_q,
        loss=math.sqrt(best_sq), initial_mapping=as_mapping(q0).copy(),
    )


# -- exhaustive oracles --------------------------------------------------------

def _scan(a, b, candidates, chunk: int = 4096):
    best_sq, best = math.inf, None
    batch = []
    for cand in candidates:
        batch.append(cand)
        if len(batch) == chunk:
            best_sq, best = _scan_batch(a, b, batch, best_sq, best)
            batch = []
    if batch:
        best_sq, best = _scan_batch(a, b, batch, best_sq, best)
    return best, best_sq


def _scan_batch(a, b, batch, best_sq, best):
    qs = np.asarray(batch, dtype=np.int64)
    losses = batch_squared_losses(a, b, qs)
    k = int(np.argmin(losses))
    # strict comparison keeps the earliest (lexicographically smallest) winner
    if losses[k] < best_sq:
        return float(losses[k]), qs[k].copy()
    return best_sq, best


def brute_force_mapping(a, b, budget: int = DEFAULT_BRUTE_FORCE_BUDGET) -> tuple[np.ndarray, float]:
    """Exact minimizer over all M**N mappings (lexicographically smallest on ties)."""
    a = check_distance_matrix(a, "source distance matrix")
    b = check_distance_matrix(b, "target distance matrix")
    n, m = a.shape[0], b.shape[0]
    if m ** n > budget:
        raise BudgetExceeded(f"{m}**{n} = {m ** n} mappings exceeds the budget of {budget}")
    q, sq = _scan(a, b, itertools.product(range(m), repeat=n))
    return q, math.sqrt(sq)


def brute_force_matching(a, b) -> tuple[np.ndarray, float]:
    """Exact minimizer over permutations of equal-size graphs (n <= 8)."""
    a = check_distance_matrix(a, "source distance matrix")
    b = check_distance_matrix(b, "target distance matrix")
    n = a.shape[0]
    if b.shape[0] != n:
        raise GeometryError(f"matching needs equal sizes, got {n} and {b.shape[0]}")
    if n > MAX_MATCHING_SIZE:
        raise GeometryError(f"brute-force matching is limited to n <= {MAX_MATCHING_SIZE}, got {n}")
    p, sq = _scan(a, b, itertools.permutations(range(n)))
    return p, math.sqrt(sq)
