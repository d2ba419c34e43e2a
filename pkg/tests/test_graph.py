import numpy as np
import pytest

from streamgcn.graph import (ContractViolation, DanglingEdgeError,
                             EmptyBatchError, GrowingGraph, NodeEvent,
                             StreamOrderError, ego_node_bound,
                             normalized_adjacency, profile_hops, sample_ego)
from streamgcn.linalg import CsrMatrix


def make_graph(edges, n, dim=2):
    """Build a graph by streaming nodes 0..n-1 with edges attached by the
    later endpoint."""
    g = GrowingGraph(dim, num_classes=2)
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[max(u, v)].append(min(u, v))
    for t in range(n):
        g.ingest(NodeEvent(node_id=t, features=np.zeros(dim),
                           neighbors=np.array(adj[t], dtype=np.int64)))
    return g


class TestIngest:
    def test_first_node(self):
        g = GrowingGraph(2, 2)
        g.ingest(NodeEvent(0, np.zeros(2), np.array([], dtype=np.int64)))
        assert g.size == 1
        assert g.edge_count() == 0

    def test_chain_builds_path(self):
        n = 6
        g = GrowingGraph(1, 2)
        g.ingest(NodeEvent(0, np.zeros(1), np.array([], dtype=np.int64)))
        for t in range(1, n):
            g.ingest(NodeEvent(t, np.zeros(1), np.array([t - 1])))
        assert g.edge_count() == n - 1
        assert g.adj[0] == [1]
        assert sorted(g.adj[2]) == [1, 3]

    def test_out_of_order_id(self):
        g = GrowingGraph(1, 2)
        with pytest.raises(StreamOrderError):
            g.ingest(NodeEvent(3, np.zeros(1), np.array([], dtype=np.int64)))

    def test_unknown_neighbor(self):
        g = GrowingGraph(1, 2)
        with pytest.raises(DanglingEdgeError):
            g.ingest(NodeEvent(0, np.zeros(1), np.array([5])))

    def test_duplicate_neighbors_rejected(self):
        with pytest.raises(DanglingEdgeError):
            NodeEvent(1, np.zeros(1), np.array([0, 0]))

    def test_shuffled_replay_recovers_static_edges(self):
        # stream a static graph in random order, neighbors filtered to
        # already-arrived nodes; the final edge set must equal the original
        rng = np.random.default_rng(0)
        n = 40
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)
                 if rng.random() < 0.1]
        order = rng.permutation(n)
        pos = np.empty(n, dtype=int)
        pos[order] = np.arange(n)

        g = GrowingGraph(1, 2)
        for t, orig in enumerate(order):
            nbrs = [int(pos[w]) for (u, v) in pairs
                    for w in ((v,) if u == orig else (u,) if v == orig else ())
                    if pos[w] < t]
            g.ingest(NodeEvent(t, np.zeros(1),
                               np.array(sorted(set(nbrs)), dtype=np.int64)))
        got = {(min(pos[u], pos[v]), max(pos[u], pos[v])) for u, v in pairs}
        streamed = set()
        for v in range(n):
            for u in g.adj[v]:
                streamed.add((min(u, v), max(u, v)))
        assert streamed == got

    def test_adjacency_symmetric_and_loop_free(self):
        g = make_graph([(0, 1), (1, 2), (0, 2), (2, 3)], 4)
        for v in range(4):
            assert v not in g.adj[v]
            for u in g.adj[v]:
                assert v in g.adj[u]


class TestSampleEgo:
    def test_degree_below_fanout_keeps_all(self):
        g = make_graph([(0, 1), (0, 2), (0, 3)], 4)
        ego = sample_ego(g, [3], (10, 10), np.random.default_rng(0))
        assert set(ego.nodes.tolist()) == {3, 0, 1, 2}

    def test_zero_fanout_keeps_seeds_with_self_loops(self):
        g = make_graph([(0, 1), (1, 2)], 3)
        ego = sample_ego(g, [0, 2], (0, 0), np.random.default_rng(0))
        assert ego.nodes.tolist() == [0, 2]
        np.testing.assert_allclose(ego.norm_adj.to_dense(), np.eye(2))

    def test_empty_seeds(self):
        g = make_graph([], 1)
        with pytest.raises(EmptyBatchError):
            sample_ego(g, [], (1,), np.random.default_rng(0))

    def test_star_inclusion_matches_hypergeometric(self):
        # center with 20 leaves, fanout 10: each leaf kept w.p. 1/2
        leaves = 20
        g = make_graph([(0, i) for i in range(1, leaves + 1)], leaves + 1)
        rng = np.random.default_rng(123)
        hits = np.zeros(leaves + 1)
        trials = 10_000
        for _ in range(trials):
            ego = sample_ego(g, [0], (10,), rng)
            for v in ego.nodes[1:]:
                hits[v] += 1
        freq = hits[1:] / trials
        assert np.all(np.abs(freq - 0.5) < 0.02)

    def test_node_bound_holds(self):
        rng = np.random.default_rng(1)
        n = 200
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)
                 if rng.random() < 0.2]
        g = make_graph(pairs, n)
        for _ in range(20):
            seeds = rng.choice(n, size=10, replace=False)
            ego = sample_ego(g, seeds, (10, 10), rng)
            assert ego.num_nodes <= ego_node_bound(10, (10, 10))

    def test_deterministic_under_seed(self):
        g = make_graph([(u, v) for u in range(30)
                        for v in range(u + 1, 30) if (u * v) % 3 == 0], 30)
        a = sample_ego(g, [5, 7], (3, 3), np.random.default_rng(9))
        b = sample_ego(g, [5, 7], (3, 3), np.random.default_rng(9))
        assert a.nodes.tolist() == b.nodes.tolist()
        assert np.array_equal(a.norm_adj.nz_values, b.norm_adj.nz_values)

    def test_full_fanout_none(self):
        g = make_graph([(0, 1), (1, 2), (2, 3)], 4)
        ego = sample_ego(g, [0], (None, None))
        assert set(ego.nodes.tolist()) == {0, 1, 2}


class TestNormalizedAdjacency:
    def test_isolated_node(self):
        adj = CsrMatrix.from_dense(np.array([[1.0]]))
        np.testing.assert_allclose(normalized_adjacency(adj).to_dense(),
                                   [[1.0]], atol=1e-15)

    def test_two_nodes_one_edge(self):
        # degrees with self-loops are (2, 2): every entry is 1/2
        adj = CsrMatrix.from_dense(np.array([[1.0, 1.0], [1.0, 1.0]]))
        np.testing.assert_allclose(normalized_adjacency(adj).to_dense(),
                                   np.full((2, 2), 0.5), atol=1e-15)

    def test_triangle(self):
        # degrees (3, 3, 3): all nine entries are 1/3
        adj = CsrMatrix.from_dense(np.ones((3, 3)))
        np.testing.assert_allclose(normalized_adjacency(adj).to_dense(),
                                   np.full((3, 3), 1.0 / 3.0), atol=1e-15)

    def test_symmetry_of_output(self):
        rng = np.random.default_rng(2)
        n = 12
        a = (rng.random((n, n)) < 0.3).astype(float)
        a = np.maximum(a, a.T)
        np.fill_diagonal(a, 1.0)
        out = normalized_adjacency(CsrMatrix.from_dense(a)).to_dense()
        np.testing.assert_allclose(out, out.T, atol=1e-15)

    def test_missing_self_loops_rejected(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ContractViolation):
            normalized_adjacency(CsrMatrix.from_dense(a))

    def test_asymmetric_rejected(self):
        a = np.array([[1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ContractViolation):
            normalized_adjacency(CsrMatrix.from_dense(a))


def reachability_oracle(g: GrowingGraph, batch, l_max):
    """Boolean adjacency-power oracle for hop profiles."""
    n = g.size
    a = np.zeros((n, n), dtype=bool)
    for v in range(n):
        for u in g.adj[v]:
            a[v, u] = True
    reach = np.zeros(n, dtype=bool)
    reach[list(batch)] = True
    node_counts = [int(reach.sum())]
    edge_counts = [0]
    dist = np.full(n, -1)
    dist[list(batch)] = 0
    frontier = reach.copy()
    for l in range(1, l_max + 1):
        new = (a[frontier].any(axis=0)) & ~reach
        dist[new] = l
        # edges between the (l-1)-ball and the new shell
        cnt = 0
        for v in range(n):
            if not new[v]:
                continue
            for u in g.adj[v]:
                if reach[u]:
                    cnt += 1
        reach |= new
        frontier = new
        node_counts.append(int(reach.sum()))
        edge_counts.append(cnt)
    return node_counts, edge_counts


class TestProfileHops:
    def test_complete_graph_one_hop_covers_all(self):
        n = 7
        g = make_graph([(u, v) for u in range(n) for v in range(u + 1, n)], n)
        p = profile_hops(g, [0], 2)
        assert p.node_counts[1] == n

    def test_path_graph_mid_node(self):
        n = 11
        g = make_graph([(i, i + 1) for i in range(n - 1)], n)
        p = profile_hops(g, [5], 5)
        for l in range(6):
            assert p.node_counts[l] == min(2 * l + 1, n)

    def test_matches_reachability_oracle(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            n = int(rng.integers(5, 50))
            pairs = [(u, v) for u in range(n) for v in range(u + 1, n)
                     if rng.random() < 0.15]
            g = make_graph(pairs, n)
            batch = rng.choice(n, size=min(4, n), replace=False).tolist()
            p = profile_hops(g, batch, 3)
            nodes, edges = reachability_oracle(g, batch, 3)
            assert p.node_counts == nodes
            assert p.edge_counts == edges

    def test_hop_zero_is_batch_size(self):
        g = make_graph([(0, 1)], 2)
        p = profile_hops(g, [0, 1], 1)
        assert p.node_counts[0] == 2
