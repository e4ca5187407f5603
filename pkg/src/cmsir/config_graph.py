"""Configuration-model multigraphs built by uniform matching of half-edges."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .degree_model import DegreeProfile, ProfileError

__all__ = [
    "HalfEdgeSystem",
    "DefectCount",
    "SimplicityError",
    "half_edge_layout",
    "pair_configuration",
    "count_defects",
    "sample_simple",
    "write_edge_list",
]

UNPAIRED = -1


class SimplicityError(RuntimeError):
    """Rejection sampling ran out of attempts."""

    def __init__(self, attempts: int, defects: list[int]):
        self.attempts = attempts
        self.defects = defects
        mean_w = float(np.mean(defects)) if defects else float("nan")
        super().__init__(
            f"no simple graph in {attempts} attempts (mean defect count W = {mean_w:.3g}); "
            "heavy-tailed degrees make P(simple) tiny"
        )


@dataclass
class HalfEdgeSystem:
    """Half-edges with their owners and the (partial) matching between them.

    Half-edges of vertex ``v`` occupy the contiguous id range
    ``offset[v]:offset[v + 1]``.
    """

    owner: np.ndarray
    partner: np.ndarray
    vertex_degree: np.ndarray
    vertex_status: np.ndarray
    offset: np.ndarray
    attempts: int = 1

    @property
    def n(self) -> int:
        return len(self.vertex_degree)

    @property
    def num_half_edges(self) -> int:
        return len(self.owner)

    @property
    def fully_paired(self) -> bool:
        return bool(np.all(self.partner != UNPAIRED))

    def check(self) -> None:
        """Assert the structural invariants (involution, ownership counts)."""
        p = self.partner
        paired = np.flatnonzero(p != UNPAIRED)
        assert np.all(p[paired] != paired), "half-edge paired with itself"
        assert np.all(p[p[paired]] == paired), "partner is not an involution"
        assert self.vertex_degree.sum() == len(self.owner)
        assert np.array_equal(np.bincount(self.owner, minlength=self.n), self.vertex_degree)

    def edges(self) -> np.ndarray:
        """``(m, 2)`` array of vertex pairs, one row per edge (loops and repeats kept)."""
        h = np.flatnonzero((self.partner != UNPAIRED) & (np.arange(len(self.partner)) < self.partner))
        return np.column_stack([self.owner[h], self.owner[self.partner[h]]])


def half_edge_layout(profile: DegreeProfile):
    """Vertex degrees/statuses plus the owner and offset arrays of their half-edges."""
    degree, status = profile.vertex_arrays()
    offset = np.zeros(len(degree) + 1, dtype=np.int64)
    np.cumsum(degree, out=offset[1:])
    owner = np.repeat(np.arange(len(degree), dtype=np.int64), degree)
    return degree, status, offset, owner


@njit(cache=True)
def _uniform_matching(rng, m):
    # Sequential rule: take the last free half-edge, pair it with a uniform
    # other free one.  Equal in law to a uniform perfect matching.
    free = np.arange(m)
    partner = np.full(m, -1, dtype=np.int64)
    size = m
    while size > 0:
        a = free[size - 1]
        size -= 1
        j = rng.integers(0, size)
        b = free[j]
        free[j] = free[size - 1]
        size -= 1
        partner[a] = b
        partner[b] = a
    return partner


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def pair_configuration(profile: DegreeProfile, rng_seed=None) -> HalfEdgeSystem:
    """Uniform random perfect matching of all half-edges of ``profile``."""
    if profile.half_edges % 2:
        raise ProfileError("odd half-edge total")
    degree, status, offset, owner = half_edge_layout(profile)
    partner = _uniform_matching(_rng(rng_seed), len(owner)) if len(owner) else np.empty(0, np.int64)
    return HalfEdgeSystem(owner, partner, degree, status, offset)


@dataclass(frozen=True)
class DefectCount:
    loops: int
    parallel_pairs: int

    @property
    def W(self) -> int:
        return self.loops + self.parallel_pairs

    @property
    def simple(self) -> bool:
        return self.W == 0


def count_defects(system: HalfEdgeSystem) -> DefectCount:
    """Loops plus pairs of parallel edges.

    An edge of multiplicity ``m`` contributes ``C(m, 2)`` parallel pairs;
    loops are counted once each and excluded from the parallel count.
    """
    if not system.fully_paired:
        raise ValueError("count_defects needs a fully paired system")
    e = system.edges()
    if len(e) == 0:
        return DefectCount(0, 0)
    u = np.minimum(e[:, 0], e[:, 1])
    v = np.maximum(e[:, 0], e[:, 1])
    is_loop = u == v
    loops = int(is_loop.sum())
    mult = Counter(zip(u[~is_loop].tolist(), v[~is_loop].tolist()))
    parallel = sum(m * (m - 1) // 2 for m in mult.values())
    return DefectCount(loops, parallel)


def sample_simple(profile: DegreeProfile, rng_seed=None, max_attempts: int = 1000) -> HalfEdgeSystem:
    """Uniform simple graph with the profile's degree sequence, by rejection.

    ``attempts`` on the returned system records how many matchings were drawn.
    """
    rng = _rng(rng_seed)
    seen = []
    for attempt in range(1, max_attempts + 1):
        system = pair_configuration(profile, rng)
        w = count_defects(system).W
        if w == 0:
            system.attempts = attempt
            return system
        seen.append(w)
    raise SimplicityError(max_attempts, seen)


def write_edge_list(system: HalfEdgeSystem, path: str | Path) -> None:
    """One ``u,v`` line per edge; loops as ``u,u`` and multi-edges repeated."""
    e = system.edges()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, v in e.tolist():
            fh.write(f"{u},{v}\n")
