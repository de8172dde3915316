"""Capacitated many-to-one matching: similarity tables, exact score, bounds."""

import numpy as np
import pytest

from oracles import enumerate_mwmto, random_unit_rows
from tusearch.errors import InvariantError
from tusearch.matching import unionability
from tusearch.mwmto import (
    BoundPair,
    PartitionSimTable,
    bounds_for_mwmto,
    greedy_lower_bound,
    mwmto_exact,
    partition_sims,
)
from tusearch.partitions import PartitionGroup, PartitionSet
from tusearch.quantizer import Codebook


def table_from(rows, capacities):
    return PartitionSimTable([list(r) for r in rows], list(capacities))


def random_dense_table(rng, tau=0.5):
    """Every (query, group) pair present with weight in [tau, 1]."""
    n_q = int(rng.integers(1, 7))
    n_g = int(rng.integers(1, 5))
    caps = [int(rng.integers(1, 4)) for _ in range(n_g)]
    rows = [
        [(g, float(rng.uniform(tau, 1.0))) for g in range(n_g)]
        for _ in range(n_q)
    ]
    return table_from(rows, caps)


def random_sparse_table(rng, tau=0.5):
    n_q = int(rng.integers(1, 7))
    n_g = int(rng.integers(1, 5))
    caps = [int(rng.integers(1, 4)) for _ in range(n_g)]
    rows = []
    for _ in range(n_q):
        row = [
            (g, float(rng.uniform(tau, 1.0)))
            for g in range(n_g)
            if rng.uniform() < 0.6
        ]
        rows.append(row)
    return table_from(rows, caps)


class TestPartitionSims:
    def make(self):
        cents = np.array(
            [[1.0, 0.0, 0.0], [0.4, 0.0, 0.0], [0.0, 0.75, 0.0]], dtype=np.float32
        )
        cb = Codebook(cents, train_seed=0)
        groups = [
            PartitionGroup(0, (1, 2), np.array([0, 1])),
            PartitionGroup(1, (0,), np.array([2])),
        ]
        pset = PartitionSet(0, groups, np.empty((0, 3), dtype=np.float32))
        return cb, pset

    def test_max_over_group_centroids(self):
        cb, pset = self.make()
        q = np.array([[0.0, 1.0, 0.0]], dtype=np.float32)
        table = partition_sims(q, pset, cb, tau=0.5)
        # group 0 sims: <q,c1>=0.0, <q,c2>=0.75 -> max 0.75
        assert table.rows[0] == [(0, pytest.approx(0.75, abs=1e-9))]

    def test_all_below_tau_gives_empty_row(self):
        cb, pset = self.make()
        q = np.array([[0.0, 0.0, 1.0]], dtype=np.float32)
        table = partition_sims(q, pset, cb, tau=0.5)
        assert table.rows[0] == []

    def test_singleton_group_is_plain_inner_product(self):
        cb, pset = self.make()
        q = np.array([[1.0, 0.0, 0.0]], dtype=np.float32)
        table = partition_sims(q, pset, cb, tau=0.5)
        assert (1, pytest.approx(1.0, abs=1e-9)) in table.rows[0]

    def test_cascade_centroids_resolved(self):
        cb, _ = self.make()
        cascade = np.array([[0.0, 0.0, 0.9]], dtype=np.float32)
        groups = [PartitionGroup(0, (cb.n_c,), np.array([0]))]
        pset = PartitionSet(0, groups, cascade)
        q = np.array([[0.0, 0.0, 1.0]], dtype=np.float32)
        table = partition_sims(q, pset, cb, tau=0.5)
        assert table.rows[0] == [(0, pytest.approx(0.9, abs=1e-6))]


class TestMwmtoExact:
    def test_unconstrained_capacities_take_row_maxima(self):
        rng = np.random.default_rng(0)
        rows = [
            [(0, 0.8), (1, 0.6)],
            [(0, 0.7), (1, 0.9)],
            [(0, 0.55)],
        ]
        table = table_from(rows, [5, 5])
        res = mwmto_exact(table)
        assert res.cardinality == 3
        assert res.score == pytest.approx(0.8 + 0.9 + 0.55, abs=1e-9)

    def test_capacity_one_blocks_second_query(self):
        table = table_from([[(0, 0.9)], [(0, 0.8)]], [1])
        res = mwmto_exact(table)
        assert res.cardinality == 1
        assert res.score == pytest.approx(0.9, abs=1e-12)
        assert res.assignment == {0: 0}

    def test_empty_table(self):
        res = mwmto_exact(table_from([[], []], [2]))
        assert (res.score, res.cardinality, res.assignment) == (0.0, 0, {})

    @pytest.mark.parametrize("maker", [random_dense_table, random_sparse_table])
    def test_matches_exhaustive_enumeration(self, maker):
        rng = np.random.default_rng(5 if maker is random_dense_table else 6)
        for _ in range(200):
            table = maker(rng)
            res = mwmto_exact(table)
            want_card, want_weight = enumerate_mwmto(table.rows, table.capacities)
            assert res.cardinality == want_card
            assert res.score == pytest.approx(want_weight, abs=1e-9)

    def test_assignment_respects_capacities(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            table = random_sparse_table(rng)
            res = mwmto_exact(table)
            usage = {}
            for qi, gid in res.assignment.items():
                usage[gid] = usage.get(gid, 0) + 1
                assert any(g == gid for g, _ in table.rows[qi])
            for gid, used in usage.items():
                assert used <= table.capacities[gid]

    def test_capacity_one_singletons_equal_bipartite_matching(self):
        rng = np.random.default_rng(8)
        for _ in range(60):
            n_q = int(rng.integers(1, 6))
            n_g = int(rng.integers(1, 6))
            cents = random_unit_rows(rng, n_g, 5).astype(np.float64)
            q = random_unit_rows(rng, n_q, 5).astype(np.float64)
            sims = q @ cents.T
            tau = 0.2
            rows = [
                [(g, float(sims[qi, g])) for g in range(n_g) if sims[qi, g] >= tau]
                for qi in range(n_q)
            ]
            table = table_from(rows, [1] * n_g)
            res = mwmto_exact(table)
            direct = unionability(q, cents, tau)
            assert res.cardinality == direct.cardinality
            assert res.score == pytest.approx(direct.weight, abs=1e-9)


class TestBounds:
    def test_capacity_one_example(self):
        # both queries hit the same capacity-1 group; the second group has no
        # thresholded entries but its vector still counts toward the pool cap
        table = table_from([[(0, 0.9)], [(0, 0.8)]], [1, 1])
        bounds = bounds_for_mwmto(table)
        assert bounds.lb == pytest.approx(0.9, abs=1e-12)
        assert bounds.ub == pytest.approx(1.7, abs=1e-12)

    def test_pool_cap_uses_whole_set_size(self):
        # with a single one-vector set the pool keeps only the best entry
        table = table_from([[(0, 0.9)], [(0, 0.8)]], [1])
        bounds = bounds_for_mwmto(table)
        assert bounds.ub == pytest.approx(0.9, abs=1e-12)

    def test_empty_table_is_zero_zero(self):
        bounds = bounds_for_mwmto(table_from([[], []], [3]))
        assert (bounds.lb, bounds.ub) == (0.0, 0.0)

    def test_single_group_unconstrained(self):
        rows = [[(0, 0.8)], [(0, 0.6)], [(0, 0.7)]]
        table = table_from(rows, [5])
        bounds = bounds_for_mwmto(table)
        assert bounds.lb == pytest.approx(0.8 + 0.6 + 0.7, abs=1e-12)
        assert bounds.ub >= bounds.lb - 1e-12

    def test_ub_caps_at_set_size(self):
        # set has two vectors overall, so at most two pool entries count
        rows = [[(0, 0.9)], [(0, 0.8)], [(0, 0.7)]]
        table = table_from(rows, [2])
        bounds = bounds_for_mwmto(table)
        assert bounds.ub == pytest.approx(0.9 + 0.8, abs=1e-12)

    def test_sandwich_on_dense_tables(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            table = random_dense_table(rng)
            res = mwmto_exact(table)
            bounds = bounds_for_mwmto(table)
            assert bounds.lb <= res.score + 1e-9
            assert res.score <= bounds.ub + 1e-9

    def test_ub_valid_even_on_sparse_tables(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            table = random_sparse_table(rng)
            res = mwmto_exact(table)
            bounds = bounds_for_mwmto(table)
            assert res.score <= bounds.ub + 1e-9

    def test_lb_assignment_is_feasible(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            table = random_sparse_table(rng)
            lb, taken = greedy_lower_bound(table)
            usage = {}
            total = 0.0
            for qi, gid in taken.items():
                usage[gid] = usage.get(gid, 0) + 1
                sim = dict(table.rows[qi])[gid]
                total += sim
            for gid, used in usage.items():
                assert used <= table.capacities[gid]
            assert lb == pytest.approx(total, abs=1e-9)

    def test_greedy_breaks_ties_by_lower_group(self):
        table = table_from([[(1, 0.8), (0, 0.8)]], [1, 1])
        _, taken = greedy_lower_bound(table)
        assert taken == {0: 0}

    def test_ub_monotone_in_tau(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            n_q, n_g = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            sims = rng.uniform(0, 1, (n_q, n_g))
            caps = [int(rng.integers(1, 4))] * n_g
            ubs = []
            for tau in (0.2, 0.4, 0.6, 0.8):
                rows = [
                    [(g, float(sims[qi, g])) for g in range(n_g) if sims[qi, g] >= tau]
                    for qi in range(n_q)
                ]
                ubs.append(bounds_for_mwmto(table_from(rows, caps)).ub)
            assert ubs == sorted(ubs, reverse=True)

    def test_bound_pair_order_enforced(self):
        with pytest.raises(InvariantError):
            BoundPair(2.0, 1.0)
