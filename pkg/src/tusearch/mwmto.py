"""Capacity-limited many-to-one matching of query vectors to a set's
partition groups, plus the cheap lower/upper estimates that sandwich it.

Each query vector may take at most one group; each group (G, S) may be
taken at most |S| times.  A query vector's similarity to a group is the
maximum inner product over the group's centroids, and only entries at or
above the threshold participate.

The exact score reuses the shifted-weight assignment reduction from
``matching`` with each group expanded into capacity-many identical columns.
The lower bound is a greedy capacity-respecting assignment (query vectors
in input order, each taking its best group with remaining capacity); the
upper bound pools every thresholded entry and sums the largest
``min(n_query, set_size)`` of them, ignoring all pairing constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, UsageError
from .matching import MatchingResult, solve_shifted_assignment
from .partitions import PartitionSet
from .quantizer import Codebook


@dataclass(frozen=True)
class BoundPair:
    lb: float
    ub: float

    def __post_init__(self):
        if self.lb > self.ub + 1e-9:
            raise InvariantError(f"bound pair out of order: lb={self.lb} > ub={self.ub}")


@dataclass
class PartitionSimTable:
    """Per query vector, the (group_id, similarity) entries clearing tau,
    plus the group capacities they draw from."""

    rows: list[list[tuple[int, float]]]
    capacities: list[int]

    @property
    def n_query(self) -> int:
        return len(self.rows)

    @property
    def set_size(self) -> int:
        return sum(self.capacities)


@dataclass(frozen=True)
class MwmtoResult:
    score: float
    cardinality: int
    assignment: dict[int, int]  # query index -> group id


def partition_sims(q_mat: np.ndarray, pset: PartitionSet, cb: Codebook, tau: float) -> PartitionSimTable:
    """Thresholded max-over-group-centroid similarities for every query vector."""
    if tau <= 0:
        raise UsageError(f"tau must be > 0, got {tau}")
    q64 = q_mat.astype(np.float64)
    cents64 = cb.centroids64()
    cascade64 = pset.cascade_centroids.astype(np.float64)
    rows: list[list[tuple[int, float]]] = [[] for _ in range(len(q64))]
    for g in pset.groups:
        mats = [
            cents64[cid] if cid < cb.n_c else cascade64[cid - cb.n_c]
            for cid in g.centroid_ids
        ]
        sims = (q64 @ np.stack(mats).T).max(axis=1)
        for qi in np.flatnonzero(sims >= tau):
            rows[int(qi)].append((g.group_id, float(sims[qi])))
    return PartitionSimTable(rows, [g.capacity for g in pset.groups])


def mwmto_exact(table: PartitionSimTable) -> MwmtoResult:
    """Maximum-cardinality-then-maximum-weight capacity-respecting assignment.

    Groups are expanded into ``min(capacity, n_query)`` identical columns and
    the expanded problem is solved exactly.
    """
    n_q = table.n_query
    col_group: list[int] = []
    col_of_group: dict[int, slice] = {}
    for gid, cap in enumerate(table.capacities):
        copies = min(cap, n_q)
        col_of_group[gid] = slice(len(col_group), len(col_group) + copies)
        col_group.extend([gid] * copies)
    if not col_group or n_q == 0:
        return MwmtoResult(0.0, 0, {})
    sims = np.zeros((n_q, len(col_group)))
    valid = np.zeros_like(sims, dtype=bool)
    for qi, row in enumerate(table.rows):
        for gid, s in row:
            cols = col_of_group[gid]
            sims[qi, cols] = s
            valid[qi, cols] = True
    res: MatchingResult = solve_shifted_assignment(sims, valid)
    assignment = {qi: col_group[col] for qi, col in res.assignment}
    return MwmtoResult(res.weight, res.cardinality, assignment)


def greedy_lower_bound(table: PartitionSimTable) -> tuple[float, dict[int, int]]:
    """Greedy capacity-respecting assignment: query vectors in input order,
    each takes its highest-similarity group with remaining capacity
    (similarity ties go to the lower group id)."""
    remaining = list(table.capacities)
    lb = 0.0
    taken: dict[int, int] = {}
    for qi, row in enumerate(table.rows):
        for gid, s in sorted(row, key=lambda e: (-e[1], e[0])):
            if remaining[gid] > 0:
                lb += s
                remaining[gid] -= 1
                taken[qi] = gid
                break
    return lb, taken


def bounds_for_mwmto(table: PartitionSimTable) -> BoundPair:
    """Sandwiching estimates around the exact capacitated score.

    The upper bound caps the number of summed entries at
    ``min(n_query, set_size)`` where set_size counts the set's vectors, not
    the threshold-reachable capacity.
    """
    lb, _ = greedy_lower_bound(table)
    pool = [s for row in table.rows for _, s in row]
    pool.sort(reverse=True)
    take = min(table.n_query, table.set_size)
    ub = float(sum(pool[:take]))
    return BoundPair(lb, ub)
