import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import brute_transition, random_dbn
from psbf.clustering import Clustering
from psbf.dbn import Dbn, x, xt
from psbf.metrics import (AbsoluteContinuityError, cluster_dependencies, cluster_transition_table,
                          expected_transition_fraction, min_row_overlap, mixing_rate_cluster, mixing_rate_dbn,
                          relative_entropy, safe_relative_entropy, error_bound_check, update_fraction_means)
from psbf.factored import UpdateStats


def _brute_mixing(matrix):
    return min(np.minimum(r1, r2).sum() for r1 in matrix for r2 in matrix)


class TestRelativeEntropy:
    def test_point_mass_against_uniform(self):
        assert relative_entropy([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_identical_is_zero(self):
        p = np.random.default_rng(0).dirichlet(np.ones(16))
        assert relative_entropy(p, p) == 0.0

    def test_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityError):
            relative_entropy([0.5, 0.5], [1, 0])
        assert safe_relative_entropy([0.5, 0.5], [1, 0]) == math.inf

    def test_floor_makes_it_finite(self):
        q = np.array([1.0, 1e-12]) / (1.0 + 1e-12)
        expected = 0.5 * math.log(0.5 / q[0]) + 0.5 * math.log(0.5 / q[1])
        assert relative_entropy([0.5, 0.5], [1, 0], floor=1e-12) == pytest.approx(expected, rel=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 20))
    def test_nonnegative(self, seed, k):
        rng = np.random.default_rng(seed)
        assert relative_entropy(rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))) >= 0.0


class TestMixing:
    def test_uniform_dynamics_mix_fully(self):
        d = Dbn("a", (2, 2), (), frozenset({(xt(0), x(0)), (xt(1), x(1))}),
                {x(0): np.full((2, 2), 0.5), x(1): np.full((2, 2), 0.5)})
        assert mixing_rate_cluster(d, (0, 1)) == pytest.approx(1.0)

    def test_deterministic_copy_does_not_mix(self):
        d = Dbn("a", (2,), (), frozenset({(xt(0), x(0))}), {x(0): np.eye(2)})
        assert mixing_rate_cluster(d, (0,)) == 0.0

    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_whole_state_rate_matches_pairwise_definition(self, seed, n):
        d = random_dbn(np.random.default_rng(seed), n)
        assert mixing_rate_cluster(d, tuple(range(n))) == pytest.approx(_brute_mixing(brute_transition(d)), abs=1e-12)

    def test_row_overlap_of_identical_rows(self):
        assert min_row_overlap(np.array([[0.2, 0.8], [0.2, 0.8]])) == pytest.approx(1.0)

    def test_factored_rate_recomposes_cluster_rates(self):
        # x1 depends on x1, x2 depends on x1 and x2: r = 2, q = 2
        rng = np.random.default_rng(0)
        d = Dbn("a", (2, 2), (), frozenset({(xt(0), x(0)), (xt(0), x(1)), (xt(1), x(1))}),
                {x(0): rng.dirichlet(np.ones(2), size=2), x(1): rng.dirichlet(np.ones(2), size=(2, 2))})
        rep = mixing_rate_dbn(d, Clustering(((0,), (1,)), ()))
        assert rep.factored and (rep.r, rep.q) == (2, 2)
        rates = [mixing_rate_cluster(d, (0,)), mixing_rate_cluster(d, (1,))]
        assert rep.gamma == pytest.approx((min(rates) / 2) ** 2, abs=1e-12)

    def test_overlap_falls_back_to_single_cluster(self):
        d = random_dbn(np.random.default_rng(1), 3)
        rep = mixing_rate_dbn(d, Clustering(((0, 1), (1, 2)), ()))
        assert not rep.factored
        assert rep.gamma == pytest.approx(mixing_rate_cluster(d, (0, 1, 2)))

    def test_dependency_counts(self):
        d = Dbn("a", (2, 2, 2), (), frozenset({(xt(0), x(0)), (xt(0), x(1)), (xt(0), x(2)), (xt(2), x(2))}),
                {x(0): np.eye(2), x(1): np.eye(2), x(2): np.full((2, 2, 2), 0.5)})
        assert cluster_dependencies(d, [(0,), (1,), (2,)]) == (2, 3)

    def test_cluster_table_rows_normalized(self):
        d = random_dbn(np.random.default_rng(2), 4)
        parents, table = cluster_transition_table(d, (0, 1))
        np.testing.assert_allclose(table.sum(axis=1), 1.0)
        assert table.shape[0] == 2 ** len(parents)


class TestBoundAndFractions:
    def test_running_mean_against_bound(self):
        rep = error_bound_check([0.25, 0.75, 0.5], eps_hat=0.125, gamma=0.25)
        np.testing.assert_allclose(rep.running_mean, [0.25, 0.5, 0.5])
        assert rep.bound == 0.5
        assert rep.holds and rep.exceeded_steps == ()

    def test_violation_reported(self):
        rep = error_bound_check([1.0, 1.0], eps_hat=0.1, gamma=0.5)
        assert not rep.holds and rep.exceeded_steps == (0, 1)

    def test_zero_gamma_is_vacuous(self):
        rep = error_bound_check([5.0], eps_hat=0.1, gamma=0.0)
        assert rep.vacuous and rep.holds and rep.to_json()["bound"] is None

    def test_fraction_means(self):
        stats = [UpdateStats(4, 1, 2, 0, 0), UpdateStats(4, 3, 4, 0, 0)]
        assert update_fraction_means(stats) == {"transition": 0.5, "observation": 0.75}
        assert expected_transition_fraction({"a": frozenset({0}), "b": frozenset()}, 4) == pytest.approx(0.875)
