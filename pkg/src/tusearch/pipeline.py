"""End-to-end top-k search: candidate generation, capacity-matching filter,
then exact partitioned scoring, with bound-based pruning in the last two
stages.

Stage 1 ranks sets by accumulated centroid similarities.  Stage 2 keeps
the top phi_r of them by the exact capacitated many-to-one score against
each set's partitions, pruning with the greedy/pooled bounds.  Stage 3
splits the query columns across a survivor's partitions along the stage-2
assignment and sums exact thresholded matchings per partition, pruning
with per-partition greedy bounds.  Queries are independent; every search
call builds its own scratch state, so one engine serves many threads.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import matching
from .centroid_ann import EXACT_MODE_MAX_CENTROIDS, CentroidGraphIndex, top_centroids
from .errors import DataError, UsageError
from .mwmto import BoundPair, MwmtoResult, bounds_for_mwmto, mwmto_exact, partition_sims
from .partitions import PartitionIndex
from .pruning import run_pruner
from .quantizer import Codebook, ClusterAssignment, SetWeightIndex, VectorInvertedIndex
from .refinement import build_postings, refine
from .repository import QueryTable, VectorSetRepository

PRUNER_NAMES = ("bf", "base", "enhanced")
ANN_MODES = ("auto", "exact", "graph")


@dataclass
class SearchParams:
    """Knobs for one search.  phi_ref defaults to 5k and phi_r to 3k; the
    stages nest, so k <= phi_r <= phi_ref is enforced."""

    k: int = 10
    tau: float = 0.7
    phi_c: int = 32
    phi_ref: int | None = None
    phi_r: int | None = None
    pruner: str = "enhanced"
    ann_mode: str = "auto"
    ef_search: int | None = None
    mark_visited_on_block: bool = True

    def resolve(self, n_sets: int) -> "ResolvedParams":
        if self.k < 1:
            raise UsageError(f"k must be >= 1, got {self.k}")
        if self.tau <= 0:
            raise UsageError(f"tau must be > 0, got {self.tau}")
        if self.phi_c < 1:
            raise UsageError(f"phi_c must be >= 1, got {self.phi_c}")
        if self.pruner not in PRUNER_NAMES:
            raise UsageError(f"pruner must be one of {PRUNER_NAMES}, got {self.pruner!r}")
        if self.ann_mode not in ANN_MODES:
            raise UsageError(f"ann_mode must be one of {ANN_MODES}, got {self.ann_mode!r}")
        phi_r = 3 * self.k if self.phi_r is None else self.phi_r
        phi_ref = 5 * self.k if self.phi_ref is None else self.phi_ref
        if not self.k <= phi_r <= phi_ref:
            raise UsageError(
                f"stage sizes must nest: k={self.k} <= phi_r={phi_r} <= phi_ref={phi_ref}"
            )
        if self.k > n_sets:
            warnings.warn(
                f"k={self.k} exceeds the repository size ({n_sets}); returning all sets",
                stacklevel=2,
            )
        return ResolvedParams(
            k=min(self.k, n_sets),
            tau=self.tau,
            phi_c=self.phi_c,
            phi_ref=min(phi_ref, n_sets),
            phi_r=min(phi_r, n_sets),
            pruner=self.pruner,
            ann_mode=self.ann_mode,
            ef_search=self.ef_search,
            mark_visited_on_block=self.mark_visited_on_block,
        )


@dataclass(frozen=True)
class ResolvedParams:
    k: int
    tau: float
    phi_c: int
    phi_ref: int
    phi_r: int
    pruner: str
    ann_mode: str
    ef_search: int | None
    mark_visited_on_block: bool


@dataclass
class SearchDiagnostics:
    refine_candidates: int = 0
    filter_candidates: int = 0
    result_count: int = 0
    filter_score_calls: int = 0
    filter_bound_calls: int = 0
    scoring_score_calls: int = 0
    scoring_bound_calls: int = 0
    depq_ops: int = 0
    stage_seconds: dict = field(default_factory=dict)

    @property
    def total_score_calls(self) -> int:
        return self.filter_score_calls + self.scoring_score_calls

    def lines(self) -> list[str]:
        out = [
            f"stage=refine candidates={self.refine_candidates} "
            f"ms={1e3 * self.stage_seconds.get('refine', 0.0):.3f}",
            f"stage=filter candidates={self.filter_candidates} "
            f"score_calls={self.filter_score_calls} bound_calls={self.filter_bound_calls} "
            f"ms={1e3 * self.stage_seconds.get('filter', 0.0):.3f}",
            f"stage=score results={self.result_count} "
            f"score_calls={self.scoring_score_calls} bound_calls={self.scoring_bound_calls} "
            f"ms={1e3 * self.stage_seconds.get('score', 0.0):.3f}",
            f"depq_ops={self.depq_ops}",
        ]
        return out


@dataclass
class SearchResult:
    items: list[tuple[int, float, int]]  # (set_id, score, cardinality), score-descending
    diagnostics: SearchDiagnostics


class _QueryState:
    """Per-search scratch: float64 query matrix plus per-candidate memos so
    bounds, exact capacity matchings, and partition splits are computed at
    most once each."""

    def __init__(self, query: QueryTable):
        self.q32 = query.vectors
        self.q64 = query.vectors.astype(np.float64)
        self.sim_tables: dict[int, object] = {}
        self.mwmto: dict[int, MwmtoResult] = {}
        self.splits: dict[int, dict[int, list[int]]] = {}
        self.clustered: dict[int, tuple[float, int]] = {}


class SearchEngine:
    """Immutable index bundle plus the search pipeline over it."""

    def __init__(
        self,
        repo: VectorSetRepository,
        codebook: Codebook,
        assignment: ClusterAssignment,
        vector_index: VectorInvertedIndex,
        weight_index: SetWeightIndex,
        partition_index: PartitionIndex,
        graph: CentroidGraphIndex | None = None,
        build_config: dict | None = None,
    ):
        self.repo = repo
        self.codebook = codebook
        self.assignment = assignment
        self.vector_index = vector_index
        self.weight_index = weight_index
        self.partition_index = partition_index
        self.graph = graph
        self.build_config = dict(build_config or {})
        self.postings = build_postings(vector_index, weight_index)

    # -- stage pieces -----------------------------------------------------

    def _ann_mode(self, params: ResolvedParams) -> str:
        if params.ann_mode == "auto":
            if self.graph is not None and self.codebook.n_c > EXACT_MODE_MAX_CENTROIDS:
                return "graph"
            return "exact"
        if params.ann_mode == "graph" and self.graph is None:
            raise UsageError("graph mode requested but the bundle has no centroid graph")
        return params.ann_mode

    def _sim_table(self, state: _QueryState, set_id: int, tau: float):
        table = state.sim_tables.get(set_id)
        if table is None:
            table = partition_sims(state.q64, self.partition_index.of(set_id), self.codebook, tau)
            state.sim_tables[set_id] = table
        return table

    def _mwmto(self, state: _QueryState, set_id: int, tau: float) -> MwmtoResult:
        res = state.mwmto.get(set_id)
        if res is None:
            res = mwmto_exact(self._sim_table(state, set_id, tau))
            state.mwmto[set_id] = res
        return res

    def _split(self, state: _QueryState, set_id: int, tau: float) -> dict[int, list[int]]:
        """Query columns per partition group.  A single-group set takes every
        query column (there is nothing to split); otherwise the exact
        capacity-matching assignment decides, and unassigned columns
        contribute to no group."""
        split = state.splits.get(set_id)
        if split is not None:
            return split
        pset = self.partition_index.of(set_id)
        n_q = len(state.q64)
        if len(pset.groups) == 1:
            split = {0: list(range(n_q))}
        else:
            split = {g.group_id: [] for g in pset.groups}
            for qi, gid in sorted(self._mwmto(state, set_id, tau).assignment.items()):
                split[gid].append(qi)
        state.splits[set_id] = split
        return split

    def _clustered(self, state: _QueryState, set_id: int, tau: float) -> tuple[float, int]:
        cached = state.clustered.get(set_id)
        if cached is not None:
            return cached
        pset = self.partition_index.of(set_id)
        split = self._split(state, set_id, tau)
        members = self.repo.vectors_of(set_id)
        total = 0.0
        cardinality = 0
        for g in pset.groups:
            qis = split.get(g.group_id, [])
            if not qis:
                continue
            res = matching.unionability(state.q32[qis], members[g.member_indices], tau)
            total += res.weight
            cardinality += res.cardinality
        state.clustered[set_id] = (total, cardinality)
        return total, cardinality

    def _clustered_bounds(self, state: _QueryState, set_id: int, tau: float) -> BoundPair:
        pset = self.partition_index.of(set_id)
        split = self._split(state, set_id, tau)
        members64 = self.repo.vectors_of(set_id).astype(np.float64)
        lb = 0.0
        ub = 0.0
        for g in pset.groups:
            qis = split.get(g.group_id, [])
            if not qis:
                continue
            sims = state.q64[qis] @ members64[g.member_indices].T
            qi_idx, vj_idx = np.nonzero(sims >= tau)
            if len(qi_idx) == 0:
                continue
            weights = sims[qi_idx, vj_idx]
            order = np.lexsort((vj_idx, qi_idx, -weights))
            take = min(len(qis), g.capacity)
            ub += float(weights[order[:take]].sum())
            used_q = set()
            used_v = set()
            for e in order:
                qi, vj = int(qi_idx[e]), int(vj_idx[e])
                if qi in used_q or vj in used_v:
                    continue
                used_q.add(qi)
                used_v.add(vj)
                lb += float(weights[e])
        return BoundPair(min(lb, ub), ub)

    # -- public operations --------------------------------------------------

    def clustered_score(self, query: QueryTable, set_id: int, tau: float) -> tuple[float, int]:
        """Exact partition-respecting score of one candidate: the query is
        split across the set's partitions and each partition contributes an
        exact thresholded matching."""
        self._check_query(query)
        return self._clustered(_QueryState(query), set_id, tau)

    def clustered_bounds(self, query: QueryTable, set_id: int, tau: float) -> BoundPair:
        """Greedy per-partition sandwich around ``clustered_score``."""
        self._check_query(query)
        return self._clustered_bounds(_QueryState(query), set_id, tau)

    def refine(self, query: QueryTable, params: SearchParams | None = None, trace=None):
        """Run only the first stage; returns (set_id, score) ranked."""
        self._check_query(query)
        resolved = (params or SearchParams()).resolve(self.repo.n_sets)
        state = _QueryState(query)
        return self._refine(state, resolved, trace)

    def _refine(self, state: _QueryState, params: ResolvedParams, trace=None):
        mode = self._ann_mode(params)
        ef = params.ef_search if params.ef_search is not None else max(64, 2 * params.phi_c)

        def top_of(qi: int):
            return top_centroids(
                self.codebook, state.q64[qi], params.phi_c,
                mode=mode, graph=self.graph, ef_search=ef,
            )

        return refine(
            self.repo.n_sets,
            len(state.q64),
            top_of,
            self.postings,
            params.phi_c,
            params.phi_ref,
            mark_visited_on_block=params.mark_visited_on_block,
            trace=trace,
        )

    def _check_query(self, query: QueryTable) -> None:
        if query.n_vectors < 1:
            raise DataError("query table has no vectors")
        if query.dimension != self.repo.dimension:
            raise DataError(
                f"dimension mismatch: {query.dimension} vs {self.repo.dimension}"
            )

    def search(self, query: QueryTable, params: SearchParams | None = None) -> SearchResult:
        """Full three-stage top-k search."""
        self._check_query(query)
        resolved = (params or SearchParams()).resolve(self.repo.n_sets)
        state = _QueryState(query)
        diag = SearchDiagnostics()
        tau = resolved.tau

        t0 = time.perf_counter()
        stage1 = self._refine(state, resolved)
        stage1_ids = [sid for sid, _ in stage1]
        diag.refine_candidates = len(stage1_ids)
        t1 = time.perf_counter()
        diag.stage_seconds["refine"] = t1 - t0

        ranked2, stats2 = run_pruner(
            resolved.pruner,
            stage1_ids,
            resolved.phi_r,
            lambda sid: _pair(bounds_for_mwmto(self._sim_table(state, sid, tau))),
            lambda sid: self._mwmto(state, sid, tau).score,
        )
        diag.filter_candidates = len(ranked2)
        diag.filter_score_calls = stats2.score_calls
        diag.filter_bound_calls = stats2.bound_calls
        diag.depq_ops += stats2.heap_ops
        t2 = time.perf_counter()
        diag.stage_seconds["filter"] = t2 - t1

        ranked3, stats3 = run_pruner(
            resolved.pruner,
            [sid for sid, _ in ranked2],
            resolved.k,
            lambda sid: _pair(self._clustered_bounds(state, sid, tau)),
            lambda sid: self._clustered(state, sid, tau)[0],
        )
        diag.scoring_score_calls = stats3.score_calls
        diag.scoring_bound_calls = stats3.bound_calls
        diag.depq_ops += stats3.heap_ops
        t3 = time.perf_counter()
        diag.stage_seconds["score"] = t3 - t2

        items = []
        for sid, score in ranked3:
            _, cardinality = self._clustered(state, sid, tau)
            items.append((sid, score, cardinality))
        items.sort(key=lambda t: (-t[1], -t[2], t[0]))
        diag.result_count = len(items)
        return SearchResult(items, diag)


def _pair(bounds: BoundPair) -> tuple[float, float]:
    return bounds.lb, bounds.ub


def build_engine(
    repo: VectorSetRepository,
    n_c: int | None = None,
    rho_low: float = 0.2,
    rho_high: float = 0.8,
    m_graph: int = 16,
    ef_construction: int = 200,
    seed: int = 0,
    kmeans_iters: int = 25,
    single_partition: bool = False,
    with_graph: bool | None = None,
) -> SearchEngine:
    """Train the codebook and assemble every index for a repository.

    ``with_graph=None`` builds the centroid graph only when the codebook is
    large enough that the flat scan stops being the obvious choice.
    """
    from .centroid_ann import build_centroid_index
    from .partitions import build_partition_index
    from .quantizer import assign_all, build_indexes, train_codebook

    codebook = train_codebook(repo, n_c=n_c, max_iters=kmeans_iters, seed=seed)
    assignment = assign_all(repo, codebook)
    iv, iw = build_indexes(repo, assignment, codebook.n_c)
    pindex = build_partition_index(
        repo, codebook, assignment,
        rho_low=rho_low, rho_high=rho_high, seed=seed,
        single_partition=single_partition,
    )
    if with_graph is None:
        with_graph = codebook.n_c > EXACT_MODE_MAX_CENTROIDS
    graph = (
        build_centroid_index(codebook, m=m_graph, ef_construction=ef_construction, seed=seed)
        if with_graph
        else None
    )
    config = {
        "n_c": codebook.n_c,
        "rho_low": rho_low,
        "rho_high": rho_high,
        "graph_m": m_graph,
        "ef_construction": ef_construction,
        "seed": seed,
        "kmeans_iters": kmeans_iters,
        "single_partition": single_partition,
        "with_graph": bool(with_graph),
        "dimension": repo.dimension,
        "n_sets": repo.n_sets,
        "total_vectors": repo.total_vectors,
    }
    return SearchEngine(repo, codebook, assignment, iv, iw, pindex, graph, config)
