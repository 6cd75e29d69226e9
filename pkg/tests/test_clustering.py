import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import brute_maximal_cliques, random_process
from psbf.clustering import (Clustering, check_assumptions, components, enforce_a1, make_clustering, moral_cliques,
                             parse_clustering_name, truncate_disjoint)
from psbf.dbn import ProcessModel, x, xt, y
from psbf.errors import InfeasibleError, ModelError
from psbf.fixtures import robot_arm, robot_arm_clusterings


def _random_digraph(seed, n):
    rng = np.random.default_rng(seed)
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    order = rng.permutation(n)
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < 0.3:
                g.add_edge(int(order[a]), int(order[b]))
    return g


class TestMethods:
    def test_robot_arm_moral_pairs(self):
        c = make_clustering(robot_arm(), "moral")
        assert c.state == ((0, 1), (1, 2))
        assert c.obs == ((0,), (1,), (2,))

    def test_robot_arm_pc_is_one_cluster(self):
        assert make_clustering(robot_arm(), "pc").state == ((0, 1, 2),)

    def test_modis_truncates_overlap(self):
        assert truncate_disjoint([(0, 1), (1, 2)]) == [(0, 1), (2,)]
        assert truncate_disjoint([(1, 2), (0, 2, 3)]) == [(0, 2, 3), (1,)]

    def test_disjoint_cliques_unchanged(self):
        assert sorted(truncate_disjoint([(0, 1), (2, 3)])) == [(0, 1), (2, 3)]

    def test_isolated_variables_are_singletons(self):
        g = nx.DiGraph()
        g.add_nodes_from(range(3))
        assert components(g) == [(0,), (1,), (2,)]
        assert moral_cliques(g) == [(0,), (1,), (2,)]

    def test_clique_cap(self):
        g = nx.DiGraph()
        g.add_nodes_from(range(12))
        with pytest.raises(InfeasibleError):
            moral_cliques(g, cap=4)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_moral_cliques_match_exhaustive_enumeration(self, seed, n):
        g = _random_digraph(seed, n)
        moral = nx.Graph(g.to_undirected())
        for v in g.nodes:
            ps = list(g.predecessors(v))
            moral.add_edges_from((a, b) for i, a in enumerate(ps) for b in ps[i + 1:])
        assert {frozenset(c) for c in moral_cliques(g)} == brute_maximal_cliques(moral)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_modis_is_disjoint_cover_inside_moral_cliques(self, seed, n):
        g = _random_digraph(seed, n)
        cliques = moral_cliques(g)
        out = truncate_disjoint(cliques)
        members = [v for c in out for v in c]
        assert sorted(members) == list(range(n))
        assert all(any(set(c) <= set(q) for q in cliques) for c in out)

    def test_names(self):
        assert parse_clustering_name("moral/singleton") == ("moral", "singleton")
        assert parse_clustering_name("pc") == ("pc", None)
        with pytest.raises(ValueError):
            parse_clustering_name("bogus")


class TestClustering:
    def test_json_is_one_based_and_round_trips(self):
        c = Clustering(((1, 0), (2,)), ((0,),))
        assert c.to_json() == {"state": [[1, 2], [3]], "obs": [[1]]}
        assert Clustering.from_json(c.to_json()) == c

    def test_cover_check(self):
        with pytest.raises(ModelError):
            Clustering(((0,),), ((0,),)).check_cover(2, 1)
        Clustering(((0,), (1,)), ((0,),)).check_cover(2, 1)


class TestAssumptions:
    def test_robot_arm_pairs_violate_a1_and_a2(self):
        s = check_assumptions(robot_arm_clusterings()["pairs"], robot_arm())
        assert not any(s.a1.values())
        assert not s.a2
        assert all(s.a3.values()) and s.a4

    @given(st.integers(0, 2**32 - 1), st.integers(1, 7))
    def test_pc_and_modis_are_disjoint_and_pc_closed(self, seed, n):
        p = random_process(np.random.default_rng(seed), n, 2)
        pc = check_assumptions(make_clustering(p, "pc"), p)
        assert pc.all_hold
        assert check_assumptions(make_clustering(p, "modis"), p).a2

    def test_enforcement_averages_foreign_parent_uniformly(self):
        # x2' depends on x1' (foreign to {x2}) and x2
        table = np.array([[[0.9, 0.1], [0.3, 0.7]], [[0.5, 0.5], [0.1, 0.9]]])  # (x2^t, x1', x2')
        edges = {(xt(0), x(0)), (xt(1), x(1)), (x(0), x(1)), (x(0), y(0))}
        cpts = {x(0): np.eye(2), x(1): table, y(0): np.full((2, 2), 0.5)}
        p = ProcessModel.build((2, 2), (2,), {"a": (edges, cpts)})
        e = enforce_a1(p, Clustering(((0,), (1,)), ((0,),)))
        local = e.state_cpts["a"][1][1]
        assert local.parents == (xt(1),)
        np.testing.assert_allclose(local.table, [[0.6, 0.4], [0.3, 0.7]])
        assert e.modified == {("a", 1, 1)}
        assert e.state_cpts["a"][0][0].table is p.actions["a"].cpt(x(0))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_enforced_tables_stay_normalized(self, seed, n):
        p = random_process(np.random.default_rng(seed), n, 2)
        e = enforce_a1(p, make_clustering(p, "singleton"))
        for per_cluster in e.state_cpts.values():
            for local in per_cluster:
                for lc in local.values():
                    np.testing.assert_allclose(lc.table.sum(axis=-1), 1.0, atol=1e-12)
                    assert all(pp.slice == 0 for pp in lc.parents)

    def test_no_modification_when_assumptions_hold(self):
        p = robot_arm()
        e = enforce_a1(p, make_clustering(p, "pc"))
        assert not e.modified and not e.modified_obs
