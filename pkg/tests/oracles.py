"""Independent reference implementations used only by tests.

These deliberately avoid the production code paths: cardinality by plain
augmenting paths, capacitated matching by exhaustive recursion over
capacity states, and a list-scan model of the double-ended queue.
"""

from __future__ import annotations

import numpy as np


def kuhn_matching_cardinality(valid: np.ndarray) -> int:
    """Maximum bipartite matching size via augmenting paths only."""
    n_left, n_right = valid.shape
    match_right = [-1] * n_right

    def try_augment(u: int, seen: list[bool]) -> bool:
        for v in range(n_right):
            if valid[u, v] and not seen[v]:
                seen[v] = True
                if match_right[v] == -1 or try_augment(match_right[v], seen):
                    match_right[v] = u
                    return True
        return False

    size = 0
    for u in range(n_left):
        if try_augment(u, [False] * n_right):
            size += 1
    return size


def enumerate_best_matching(sims: np.ndarray, valid: np.ndarray) -> tuple[int, float]:
    """(cardinality, weight)-lexicographic best one-to-one matching by
    explicit recursion over rows; no memoization, no shared code."""
    n_left, n_right = sims.shape

    best = [(0, 0.0)]

    def go(row: int, used: int, card: int, weight: float) -> None:
        if row == n_left:
            if (card, weight) > best[0]:
                best[0] = (card, weight)
            return
        go(row + 1, used, card, weight)
        for col in range(n_right):
            if valid[row, col] and not used & (1 << col):
                go(row + 1, used | (1 << col), card + 1, weight + float(sims[row, col]))

    go(0, 0, 0, 0.0)
    return best[0]


def enumerate_mwmto(rows: list[list[tuple[int, float]]], capacities: list[int]) -> tuple[int, float]:
    """Exhaustive capacity-respecting many-to-one assignment, maximizing
    (cardinality, weight) lexicographically."""
    best = [(0, 0.0)]
    caps = list(capacities)

    def go(qi: int, card: int, weight: float) -> None:
        if qi == len(rows):
            if (card, weight) > best[0]:
                best[0] = (card, weight)
            return
        go(qi + 1, card, weight)  # leave this query vector unmatched
        for gid, s in rows[qi]:
            if caps[gid] > 0:
                caps[gid] -= 1
                go(qi + 1, card + 1, weight + s)
                caps[gid] += 1

    go(0, 0, 0.0)
    return best[0]


class NaiveDepqModel:
    """List-backed reference for the double-ended queue: linear scans for
    every extreme, eager removal, no heaps anywhere."""

    def __init__(self):
        self.items: dict[int, tuple[float, float]] = {}  # set_id -> (lb, ub)

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, set_id: int, lb: float, ub: float) -> None:
        assert set_id not in self.items
        self.items[set_id] = (lb, ub)

    def min_lb(self) -> int:
        return min(self.items, key=lambda s: (self.items[s][0], s))

    def min_ub(self) -> int:
        return min(self.items, key=lambda s: (self.items[s][1], s))

    def max_ub(self) -> int:
        return min(self.items, key=lambda s: (-self.items[s][1], s))

    def extract_max_ub(self) -> int:
        sid = self.max_ub()
        del self.items[sid]
        return sid

    def remove(self, set_id: int) -> None:
        del self.items[set_id]


def random_unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    raw = rng.standard_normal((n, d))
    return (raw / np.linalg.norm(raw, axis=1)[:, None]).astype(np.float32)


def sets_from_sims(sims) -> tuple[np.ndarray, np.ndarray]:
    """Two vector blocks whose pairwise inner products equal ``sims``: rows of
    Q are orthonormal basis vectors and columns of V copy the matrix."""
    sims = np.asarray(sims, dtype=np.float64)
    m, _ = sims.shape
    return np.eye(m, dtype=np.float64), sims.T.copy()
