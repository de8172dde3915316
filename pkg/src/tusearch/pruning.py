"""Top-m selection over bound-equipped candidates.

Three interchangeable strategies, all generic over a bound estimator and an
exact scorer so the same code serves every pipeline stage:

* ``exhaustive_rank``  scores everything (the reference baseline),
* ``base_prune``       gates each candidate's exact scoring on its upper
                       bound against a min-heap of resolved scores,
* ``enhanced_prune``   additionally parks candidates in a double-ended
                       priority queue and defers resolution so that exact
                       scores are computed in (approximately) descending
                       order of promise, which tightens the gate sooner.

All three break score ties by the lower set id so their outputs are
directly comparable.  A candidate is only ever dropped without scoring
when the top heap already holds m resolved scores at or above its upper
bound, so the selected top-m set is exact whenever the upper bounds are
valid; lower bounds are treated as hints only and never affect which
candidates survive.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .errors import UsageError


@dataclass
class BoundedCandidate:
    set_id: int
    lb: float
    ub: float
    resolved_score: float | None = None


@dataclass
class PruneStats:
    score_calls: int = 0
    bound_calls: int = 0
    heap_ops: int = 0
    # populated only when auditing: (set_id, ub, resolved scores present at
    # the moment the candidate was dropped without scoring)
    discards: list | None = None

    def note_discard(self, set_id: int, ub: float, top_scores: list[float]) -> None:
        if self.discards is not None:
            self.discards.append((set_id, ub, tuple(top_scores)))


class DoubleEndedQueue:
    """Bound-keyed double-ended priority queue with tombstone lazy deletion.

    Live candidates are indexed by set id; three heap views (min lower
    bound, min upper bound, max upper bound) share them.  Removal marks the
    entry dead everywhere except the view the caller popped from; dead
    entries are purged when they surface at a root.  ``op_count`` counts
    individual sift operations (heap pushes and pops) for cost accounting.
    """

    def __init__(self):
        self._live: dict[int, tuple[int, BoundedCandidate]] = {}
        self._min_lb: list[tuple[float, int, int]] = []  # (lb, set_id, version)
        self._min_ub: list[tuple[float, int, int]] = []
        self._max_ub: list[tuple[float, int, int]] = []  # (-ub, set_id, version)
        self._version = 0
        self.op_count = 0

    def __len__(self) -> int:
        return len(self._live)

    def _is_live(self, set_id: int, version: int) -> bool:
        entry = self._live.get(set_id)
        return entry is not None and entry[0] == version

    def insert(self, cand: BoundedCandidate) -> None:
        if cand.set_id in self._live:
            raise UsageError(f"set_id {cand.set_id} already live in queue")
        self._version += 1
        self._live[cand.set_id] = (self._version, cand)
        heapq.heappush(self._min_lb, (cand.lb, cand.set_id, self._version))
        heapq.heappush(self._min_ub, (cand.ub, cand.set_id, self._version))
        heapq.heappush(self._max_ub, (-cand.ub, cand.set_id, self._version))
        self.op_count += 3

    def _purge(self, heap: list[tuple[float, int, int]]) -> None:
        while heap and not self._is_live(heap[0][1], heap[0][2]):
            heapq.heappop(heap)
            self.op_count += 1

    def min_lb(self) -> BoundedCandidate:
        self._purge(self._min_lb)
        if not self._min_lb:
            raise IndexError("queue is empty")
        return self._live[self._min_lb[0][1]][1]

    def min_ub(self) -> BoundedCandidate:
        self._purge(self._min_ub)
        if not self._min_ub:
            raise IndexError("queue is empty")
        return self._live[self._min_ub[0][1]][1]

    def extract_max_ub(self) -> BoundedCandidate:
        self._purge(self._max_ub)
        if not self._max_ub:
            raise IndexError("queue is empty")
        _, set_id, _ = heapq.heappop(self._max_ub)
        self.op_count += 1
        cand = self._live.pop(set_id)[1]  # tombstones the other two views
        return cand

    def remove(self, set_id: int) -> BoundedCandidate:
        entry = self._live.pop(set_id, None)
        if entry is None:
            raise UsageError(f"set_id {set_id} not live in queue")
        return entry[1]

    def drain_live(self) -> list[BoundedCandidate]:
        out = [entry[1] for entry in self._live.values()]
        self._live.clear()
        self._min_lb.clear()
        self._min_ub.clear()
        self._max_ub.clear()
        return out


class _TopHeap:
    """Min-heap of the best m (score, set id) pairs seen so far.  Orders by
    (score, -set_id) so equal scores favor the lower id uniformly."""

    def __init__(self, m: int):
        self.m = m
        self._heap: list[tuple[float, int]] = []  # (score, -set_id)

    def __len__(self) -> int:
        return len(self._heap)

    def full(self) -> bool:
        return len(self._heap) >= self.m

    def push(self, score: float, set_id: int) -> None:
        heapq.heappush(self._heap, (score, -set_id))

    def push_if_better(self, score: float, set_id: int) -> bool:
        if (score, -set_id) > self._heap[0]:
            heapq.heapreplace(self._heap, (score, -set_id))
            return True
        return False

    def dominates(self, ub: float, set_id: int) -> bool:
        """True when m resolved scores already sit at or above (ub, id) in
        tie order, so a candidate bounded by ub cannot enter the top m."""
        return self.full() and (ub, -set_id) <= self._heap[0]

    def scores(self) -> list[float]:
        return [s for s, _ in self._heap]

    def ranked(self) -> list[tuple[int, float]]:
        out = sorted(self._heap, key=lambda t: (-t[0], -t[1]))
        return [(-neg_id, score) for score, neg_id in out]


def exhaustive_rank(candidates, m: int, score_fn) -> tuple[list[tuple[int, float]], PruneStats]:
    """Score every candidate; the no-pruning baseline."""
    if m < 1:
        raise UsageError(f"m must be >= 1, got {m}")
    stats = PruneStats()
    scored = []
    for sid in candidates:
        s = score_fn(sid)
        stats.score_calls += 1
        scored.append((sid, s))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:m], stats


def base_prune(
    candidates,
    m: int,
    bound_fn,
    score_fn,
    audit: bool = False,
) -> tuple[list[tuple[int, float]], PruneStats]:
    """Streaming top-m with per-candidate bound gating.

    The first m candidates are scored outright.  After that each candidate
    is scored only if its upper bound could still beat the current m-th
    score.  A lower bound above the heap minimum implies that gate passes
    (lb <= ub), so the gate alone decides; the post-scoring comparison keeps
    the heap correct even if a bound estimator overshoots.
    """
    if m < 1:
        raise UsageError(f"m must be >= 1, got {m}")
    stats = PruneStats(discards=[] if audit else None)
    heap = _TopHeap(m)
    for sid in candidates:
        if not heap.full():
            score = score_fn(sid)
            stats.score_calls += 1
            heap.push(score, sid)
            continue
        lb, ub = bound_fn(sid)
        stats.bound_calls += 1
        if heap.dominates(ub, sid):
            stats.note_discard(sid, ub, heap.scores())
            continue
        score = score_fn(sid)
        stats.score_calls += 1
        heap.push_if_better(score, sid)
    return heap.ranked(), stats


def enhanced_prune(
    candidates,
    m: int,
    bound_fn,
    score_fn,
    audit: bool = False,
) -> tuple[list[tuple[int, float]], PruneStats]:
    """Deferred-resolution top-m selection over a bound-tracking queue.

    A pool of the m most promising unresolved candidates rides in a
    double-ended priority queue.  Per candidate, a three-way decision:

    * upper bound below the pool's weakest upper bound: park it for the
      final pass (it cannot currently displace anything),
    * lower bound above the pool's weakest lower bound: swap it in for the
      pool's weakest-upper-bound member, which is parked instead,
    * otherwise: resolve pool members in descending upper-bound order until
      the newcomer is either provably out or can be pooled.

    Parked candidates are re-examined at the end against the fully resolved
    score heap in descending upper-bound order, so nothing is lost to a
    bound overlap; most of them fail the gate by then and are dropped
    without scoring.
    """
    if m < 1:
        raise UsageError(f"m must be >= 1, got {m}")
    stats = PruneStats(discards=[] if audit else None)
    heap = _TopHeap(m)
    pool = DoubleEndedQueue()
    parked: list[BoundedCandidate] = []

    def resolve(cand: BoundedCandidate) -> None:
        if not heap.full():
            cand.resolved_score = score_fn(cand.set_id)
            stats.score_calls += 1
            heap.push(cand.resolved_score, cand.set_id)
            return
        if heap.dominates(cand.ub, cand.set_id):
            stats.note_discard(cand.set_id, cand.ub, heap.scores())
            return
        cand.resolved_score = score_fn(cand.set_id)
        stats.score_calls += 1
        heap.push_if_better(cand.resolved_score, cand.set_id)

    for sid in candidates:
        lb, ub = bound_fn(sid)
        stats.bound_calls += 1
        cand = BoundedCandidate(sid, lb, ub)
        if len(pool) < m:
            pool.insert(cand)
            continue
        if ub < pool.min_ub().ub:
            parked.append(cand)
        elif lb > pool.min_lb().lb:
            parked.append(pool.remove(pool.min_ub().set_id))
            pool.insert(cand)
        else:
            while len(pool) > 0 and ub >= pool.min_lb().lb and lb <= pool.min_ub().ub:
                resolve(pool.extract_max_ub())
                if heap.dominates(ub, sid):
                    break
            if heap.dominates(ub, sid):
                stats.note_discard(sid, ub, heap.scores())
            else:
                pool.insert(cand)
    remaining = pool.drain_live() + parked
    remaining.sort(key=lambda c: (-c.ub, c.set_id))
    for cand in remaining:
        resolve(cand)
    stats.heap_ops = pool.op_count
    return heap.ranked(), stats


PRUNERS = {
    "bf": lambda cands, m, bound_fn, score_fn: exhaustive_rank(cands, m, score_fn),
    "base": base_prune,
    "enhanced": enhanced_prune,
}


def run_pruner(name: str, candidates, m: int, bound_fn, score_fn):
    if name not in PRUNERS:
        raise UsageError(f"unknown pruner {name!r}; expected one of {sorted(PRUNERS)}")
    if name == "bf":
        return exhaustive_rank(candidates, m, score_fn)
    return PRUNERS[name](candidates, m, bound_fn, score_fn)
