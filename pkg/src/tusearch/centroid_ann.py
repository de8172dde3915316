"""Nearest-centroid retrieval: an exact flat scorer and a layered
navigable-small-world graph over the codebook, selectable per build.

"Nearest" here means highest inner product, matching how centroid
similarities are consumed downstream.  The graph uses geometric level
sampling, bidirectional links capped at M per node (2M at layer 0), and a
beam search at the base layer.  Construction and search are deterministic
given the seed: all heap entries are (score, node id) tuples, so ties
resolve by id.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .quantizer import Codebook

# Flat scan beats graph overhead for small codebooks; used as the automatic
# mode cutoff by callers.
EXACT_MODE_MAX_CENTROIDS = 4096
DEFAULT_M = 16
DEFAULT_EF_CONSTRUCTION = 200


def exact_top_centroids(cb: Codebook, v_q: np.ndarray, phi_c: int) -> list[tuple[int, float]]:
    """True top-phi_c centroids by inner product, ties to the lower id.
    Asking for more centroids than exist returns them all."""
    if phi_c < 1:
        raise UsageError(f"phi_c must be >= 1, got {phi_c}")
    sims = cb.centroids64() @ np.asarray(v_q, dtype=np.float64)
    k = min(phi_c, cb.n_c)
    order = np.lexsort((np.arange(cb.n_c), -sims))[:k]
    return [(int(c), float(sims[c])) for c in order]


@dataclass
class CentroidGraphIndex:
    """Layered proximity graph over the codebook centroids."""

    vectors: np.ndarray  # (n, d) float64 copy of the centroids
    layers: list[dict[int, list[int]]]  # adjacency per level, level 0 first
    levels: np.ndarray  # per node, highest layer it appears in
    entry_point: int
    m: int
    ef_construction: int
    seed: int
    stats: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.vectors)

    def _sims(self, q: np.ndarray, ids: list[int]) -> np.ndarray:
        return self.vectors[ids] @ q

    def _search_layer(
        self, q: np.ndarray, entry: list[int], layer: int, ef: int
    ) -> list[tuple[float, int]]:
        """Beam search at one layer; returns up to ef (similarity, id) pairs
        sorted by descending similarity, ties to the lower id."""
        adj = self.layers[layer]
        visited = set(entry)
        entry_sims = self._sims(q, entry)
        candidates = []  # max-heap over similarity: (-sim, id)
        best = []  # min-heap over similarity: (sim, -id) so worst tie = higher id
        for node, s in zip(entry, entry_sims):
            heapq.heappush(candidates, (-s, node))
            heapq.heappush(best, (s, -node))
        while candidates:
            neg_s, node = heapq.heappop(candidates)
            if len(best) >= ef and -neg_s < best[0][0]:
                break
            fresh = [nb for nb in adj.get(node, ()) if nb not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for nb, s in zip(fresh, self._sims(q, fresh)):
                if len(best) < ef:
                    heapq.heappush(candidates, (-s, nb))
                    heapq.heappush(best, (s, -nb))
                elif (s, -nb) > best[0]:
                    heapq.heappush(candidates, (-s, nb))
                    heapq.heapreplace(best, (s, -nb))
        out = [(s, -negid) for s, negid in best]
        out.sort(key=lambda t: (-t[0], t[1]))
        return out

    def search(self, v_q: np.ndarray, k: int, ef_search: int) -> list[tuple[int, float]]:
        """Approximate top-k centroids by inner product, sorted descending,
        no duplicates."""
        if k < 1:
            raise UsageError(f"k must be >= 1, got {k}")
        q = np.asarray(v_q, dtype=np.float64)
        ef = max(ef_search, k)
        curr = [self.entry_point]
        for layer in range(len(self.layers) - 1, 0, -1):
            curr = [self._search_layer(q, curr, layer, 1)[0][1]]
        found = self._search_layer(q, curr, 0, ef)
        return [(node, s) for s, node in found[:k]]


def _select_neighbors(cands: list[tuple[float, int]], m: int) -> list[int]:
    # keep the m most similar, ties to the lower id
    ordered = sorted(cands, key=lambda t: (-t[0], t[1]))
    return [node for _, node in ordered[:m]]


def build_centroid_index(
    cb: Codebook,
    m: int = DEFAULT_M,
    ef_construction: int = DEFAULT_EF_CONSTRUCTION,
    seed: int = 0,
) -> CentroidGraphIndex:
    """Insert centroids in id order into a layered small-world graph."""
    if m < 2:
        raise UsageError(f"M must be >= 2, got {m}")
    if cb.n_c < 1:
        raise DataError("cannot index an empty codebook")
    rng = np.random.default_rng(seed)
    inv_log_m = 1.0 / math.log(m)
    levels = np.floor(-np.log(rng.uniform(size=cb.n_c, low=np.nextafter(0, 1), high=1.0)) * inv_log_m).astype(np.int64)
    max_level = int(levels.max())
    index = CentroidGraphIndex(
        vectors=cb.centroids64(),
        layers=[{} for _ in range(max_level + 1)],
        levels=levels,
        entry_point=0,
        m=m,
        ef_construction=ef_construction,
        seed=seed,
    )
    top_so_far = int(levels[0])
    for layer in range(top_so_far + 1):
        index.layers[layer][0] = []
    for node in range(1, cb.n_c):
        q = index.vectors[node]
        level = int(levels[node])
        curr = [index.entry_point]
        for layer in range(top_so_far, level, -1):
            curr = [index._search_layer(q, curr, layer, 1)[0][1]]
        for layer in range(min(level, top_so_far), -1, -1):
            cap = m if layer > 0 else 2 * m
            found = index._search_layer(q, curr, layer, ef_construction)
            neighbors = _select_neighbors(found, cap)
            adj = index.layers[layer]
            adj[node] = list(neighbors)
            for nb in neighbors:
                links = adj[nb]
                links.append(node)
                if len(links) > cap:
                    sims = index._sims(index.vectors[nb], links)
                    adj[nb] = _select_neighbors(list(zip(sims, links)), cap)
            curr = neighbors if neighbors else curr
        for layer in range(top_so_far + 1, level + 1):
            index.layers[layer][node] = []
        if level > top_so_far:
            index.entry_point = node
            top_so_far = level
    _ensure_base_connectivity(index)
    return index


def _ensure_base_connectivity(index: CentroidGraphIndex) -> None:
    """Connect any layer-0 stragglers to their nearest reachable node.
    Rarely needed; keeps searches total over the inserted nodes."""
    adj = index.layers[0]
    n = index.n_nodes
    cap = 2 * index.m
    for _ in range(n):
        reached = _bfs(adj, index.entry_point, n)
        missing = [v for v in range(n) if not reached[v]]
        if not missing:
            return
        node = missing[0]
        reach_ids = np.flatnonzero(reached)
        sims = index.vectors[reach_ids] @ index.vectors[node]
        for cand in reach_ids[np.argsort(-sims, kind="stable")]:
            cand = int(cand)
            if len(adj.get(cand, ())) < cap:
                adj.setdefault(cand, []).append(node)
                adj.setdefault(node, []).append(cand)
                break
        else:  # every reachable list full: link to the nearest anyway
            best = int(reach_ids[int(np.argmax(sims))])
            adj.setdefault(best, []).append(node)
            adj.setdefault(node, []).append(best)


def _bfs(adj: dict[int, list[int]], start: int, n: int) -> np.ndarray:
    reached = np.zeros(n, dtype=bool)
    reached[start] = True
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj.get(u, ()):
                if not reached[v]:
                    reached[v] = True
                    nxt.append(v)
        frontier = nxt
    return reached


def top_centroids(
    cb: Codebook,
    v_q: np.ndarray,
    phi_c: int,
    mode: str = "exact",
    graph: CentroidGraphIndex | None = None,
    ef_search: int | None = None,
) -> list[tuple[int, float]]:
    """Dispatch centroid retrieval to the flat scorer or the graph."""
    if mode == "exact":
        return exact_top_centroids(cb, v_q, phi_c)
    if mode == "graph":
        if graph is None:
            raise UsageError("graph mode requested but no graph index supplied")
        if ef_search is None:
            ef_search = max(64, 2 * phi_c)
        return graph.search(v_q, min(phi_c, cb.n_c), ef_search)
    raise UsageError(f"unknown centroid retrieval mode: {mode!r}")
