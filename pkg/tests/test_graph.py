import math

import numpy as np
import pytest
import scipy.optimize as sopt

from causalfeat.data import ScmSpec, generate_scm
from causalfeat.graph import (CausalGroups, Digraph, GraphError, SolverOptions,
                              WeightedAdjacency, acyclicity_h, assign_roles,
                              bic_score, bootstrap_ensemble, default_group_cap,
                              edge_f1, notears_fit, screen_groups,
                              select_lambda_bic, shd, soft_roles, threshold_to_dag)
from causalfeat import mi as _mi


def _expm_series_oracle(A, terms=40):
    """Independent plain Taylor sum (no scaling/squaring)."""
    E = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        E = E + term
    return E


def _chain_dataset(n=1000, weight=1.5, seed=0, d=3):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, d))
    X[:, 0] = rng.standard_normal(n)
    for j in range(1, d):
        X[:, j] = weight * X[:, j - 1] + rng.standard_normal(n)
    return X


class TestAcyclicity:
    def test_zero_matrix(self):
        value, grad = acyclicity_h(np.zeros((3, 3)))
        assert value == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(grad, 0.0)

    def test_single_edge_acyclic(self):
        W = np.zeros((2, 2))
        W[0, 1] = 3.7
        value, _ = acyclicity_h(W)
        assert value == pytest.approx(0.0, abs=1e-10)

    def test_two_cycle_closed_form(self):
        W = np.array([[0.0, 1.0], [1.0, 0.0]])
        value, _ = acyclicity_h(W)
        oracle = np.trace(_expm_series_oracle(W * W)) - 2
        assert oracle == pytest.approx(2 * math.cosh(1.0) - 2, abs=1e-12)
        assert value == pytest.approx(oracle, abs=1e-10)

    def test_series_oracle_agreement_random(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            W = rng.uniform(-1, 1, size=(6, 6))
            value, _ = acyclicity_h(W)
            oracle = np.trace(_expm_series_oracle(W * W, terms=60)) - 6
            assert value == pytest.approx(oracle, rel=1e-10, abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        W = rng.uniform(-1, 1, size=(5, 5))
        _, grad = acyclicity_h(W)
        fd = np.zeros_like(W)
        eps = 1e-6
        for i in range(5):
            for j in range(5):
                Wp, Wm = W.copy(), W.copy()
                Wp[i, j] += eps
                Wm[i, j] -= eps
                fd[i, j] = (acyclicity_h(Wp)[0] - acyclicity_h(Wm)[0]) / (2 * eps)
        assert np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1.0) < 1e-7

    def test_permuted_triangular_is_acyclic(self):
        rng = np.random.default_rng(2)
        for seed in range(5):
            W = np.triu(rng.uniform(-2, 2, size=(8, 8)), k=1)
            perm = rng.permutation(8)
            P = np.eye(8)[perm]
            value, _ = acyclicity_h(P @ W @ P.T)
            assert abs(value) < 1e-8

    def test_non_finite_rejected(self):
        W = np.zeros((2, 2))
        W[0, 1] = np.nan
        with pytest.raises(ValueError):
            acyclicity_h(W)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            acyclicity_h(np.zeros((2, 3)))


class TestNotears:
    def test_chain_recovery_exact(self):
        X = _chain_dataset()
        adj = notears_fit(X, 0.03)
        assert adj.converged and adj.h_value <= 1e-8
        edges = threshold_to_dag(adj, 0.1).edge_set()
        assert edges == {(0, 1), (1, 2)}

    def test_null_model(self):
        for seed in range(10):
            X = np.random.default_rng(seed).standard_normal((300, 4))
            adj = notears_fit(X, 0.1)
            W = np.where(np.abs(adj.W) > 0.1, adj.W, 0.0)
            assert np.abs(W).sum() < 0.05

    def test_converged_h_below_tolerance(self):
        X = _chain_dataset(n=400, seed=3)
        for lam in (0.01, 0.05):
            adj = notears_fit(X, lam)
            assert adj.converged
            assert abs(acyclicity_h(adj.W)[0]) <= 1e-8

    def test_diagonal_pinned_zero(self):
        X = _chain_dataset(n=300, seed=4)
        adj = notears_fit(X, 0.02)
        assert np.all(np.diag(adj.W) == 0.0)

    def test_non_convergence_flagged(self):
        X = _chain_dataset(n=300, seed=5)
        adj = notears_fit(X, 0.03, SolverOptions(max_dual_iters=3))
        assert not adj.converged

    def test_inner_objective_monotone(self):
        # the augmented-Lagrangian inner problem decreases monotonically
        # across accepted solver iterates for fixed (alpha, rho)
        X = _chain_dataset(n=200, seed=6)
        n, d = X.shape
        Xc = X - X.mean(axis=0)
        cov = Xc.T @ Xc / n
        lam, alpha, rho = 0.03, 0.5, 10.0
        eye = np.eye(d)

        def objective(w):
            W = (w[: d * d] - w[d * d:]).reshape(d, d)
            IW = eye - W
            h, gh = acyclicity_h(W)
            obj = 0.5 * float((IW * (cov @ IW)).sum()) + lam * w.sum() \
                + alpha * h + 0.5 * rho * h * h
            gW = -cov @ IW + (alpha + rho * h) * gh
            return obj, np.concatenate([(gW + lam).ravel(), (-gW + lam).ravel()])

        values = []
        sopt.minimize(objective, np.zeros(2 * d * d), jac=True, method="L-BFGS-B",
                      bounds=[(0.0, None)] * (2 * d * d),
                      callback=lambda w: values.append(objective(w)[0]))
        assert len(values) > 2
        assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))

    def test_standardize_mode_scale_invariance(self):
        X = _chain_dataset(n=500, seed=7)
        opts = SolverOptions(standardize=True)
        base = threshold_to_dag(notears_fit(X, 0.03, opts), 0.1).edge_set()
        X2 = X.copy()
        X2[:, 1] *= 250.0
        scaled = threshold_to_dag(notears_fit(X2, 0.03, opts), 0.1).edge_set()
        assert base == scaled


class TestLambdaSelection:
    def test_singleton(self):
        X = _chain_dataset(n=300, seed=8)
        adj, lam = select_lambda_bic(X, [0.04])
        assert lam == 0.04 and adj.lam == 0.04

    def test_chain_grid_recovers_truth(self):
        X = _chain_dataset()
        adj, lam = select_lambda_bic(X, [0.01, 0.03, 0.05])
        assert threshold_to_dag(adj, 0.1).edge_set() == {(0, 1), (1, 2)}

    def test_all_nonconverged_raises(self):
        X = _chain_dataset(n=200, seed=9)
        with pytest.raises(GraphError, match="no lambda converged"):
            select_lambda_bic(X, [0.01, 0.05], SolverOptions(max_dual_iters=2))

    def test_invalid_grid(self):
        with pytest.raises(GraphError):
            select_lambda_bic(_chain_dataset(n=100), [])


class TestThreshold:
    def _adj(self, W, converged=True):
        return WeightedAdjacency(np.asarray(W, dtype=float),
                                 [f"v{i}" for i in range(len(W))], 0.03,
                                 converged=converged)

    def test_empty_when_all_below(self):
        g = threshold_to_dag(self._adj([[0, 0.05], [0, 0]]), 0.1)
        assert g.n_edges() == 0

    def test_counts_strictly_above(self):
        W = [[0, 0.05, 0.2], [0, 0, 0.15], [0, 0, 0]]
        g = threshold_to_dag(self._adj(W), 0.1)
        assert g.n_edges() == 2
        assert g.edge_set() == {(0, 2), (1, 2)}

    def test_converged_admits_topological_order(self):
        X = _chain_dataset(n=300, seed=10)
        adj = notears_fit(X, 0.03)
        assert threshold_to_dag(adj, 0.1).topological_order() is not None

    def test_cycle_breaking_removes_weakest(self):
        W = [[0, 0.5, 0], [0, 0, 0.4], [0.3, 0, 0]]  # 3-cycle
        g = threshold_to_dag(self._adj(W, converged=False), 0.1)
        assert g.topological_order() is not None
        assert g.edge_set() == {(0, 1), (1, 2)}  # weakest (2, 0) removed


class TestRoles:
    def _graph(self, edges, n):
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            adj[i, j] = True
        return Digraph(adj, [f"v{i}" for i in range(n)])

    def test_chain(self):
        g = self._graph([(0, 1), (1, 2)], 3)
        roles = assign_roles(g, 2)
        assert roles == {0: "indirect", 1: "direct"}

    def test_isolated_is_other(self):
        g = self._graph([(0, 2)], 3)
        assert assign_roles(g, 2)[1] == "other"

    def test_direct_takes_precedence(self):
        g = self._graph([(0, 2), (0, 1), (1, 2)], 3)
        assert assign_roles(g, 2)[0] == "direct"

    def test_partition_covers_all(self):
        rng = np.random.default_rng(3)
        adj = np.triu(rng.random((8, 8)) < 0.3, k=1)
        roles = assign_roles(Digraph(adj, [str(i) for i in range(8)]), 7)
        assert sorted(roles) == list(range(7))
        assert set(roles.values()) <= {"direct", "indirect", "other"}


def _brute_force_mi_ranking(X, y, members, k):
    """Exhaustive oracle with an independent MI computation over the bins."""
    y_codes = _mi.discretize(y)
    scores = {}
    for f in members:
        x_codes = _mi.discretize(X[:, f])
        n = len(y_codes)
        mi_val = 0.0
        for a in np.unique(x_codes):
            for b in np.unique(y_codes):
                p_ab = np.mean((x_codes == a) & (y_codes == b))
                if p_ab > 0:
                    p_a = np.mean(x_codes == a)
                    p_b = np.mean(y_codes == b)
                    mi_val += p_ab * math.log(p_ab / (p_a * p_b))
        scores[f] = mi_val
    return sorted(members, key=lambda f: (-scores[f], f))[:k]


class TestScreening:
    def test_small_group_unchanged(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(80, 5))
        roles = {0: "direct", 1: "direct", 2: "direct", 3: "other", 4: "other"}
        groups = screen_groups(roles, X, rng.normal(size=80), k_g=10)
        assert groups.screened["direct"] == [0, 1, 2]

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(150, 12))
        y = X[:, 3] + 0.5 * X[:, 7] + 0.1 * rng.normal(size=150)
        roles = {f: "direct" for f in range(12)}
        groups = screen_groups(roles, X, y, k_g=5)
        oracle = _brute_force_mi_ranking(X, y, list(range(12)), 5)
        assert groups.screened["direct"] == oracle

    def test_default_cap_rule(self):
        assert default_group_cap(100) == 10
        assert default_group_cap(300) == 15
        assert default_group_cap(9) == 3

    def test_pearson_fallback_on_degenerate(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(60, 4))
        X[:, 2] = 1.0  # constant: single bin after discretization
        y = X[:, 0] + 0.1 * rng.normal(size=60)
        roles = {f: "other" for f in range(4)}
        groups = screen_groups(roles, X, y, k_g=2)
        assert groups.screened["other"][0] == 0  # top |Pearson| feature

    def test_lists_disjoint_and_capped(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(100, 9))
        y = rng.normal(size=100)
        roles = {f: ("direct" if f < 4 else "other") for f in range(9)}
        groups = screen_groups(roles, X, y, k_g=2)
        assert all(len(v) <= 2 for v in groups.screened.values())
        seen = [f for v in groups.screened.values() for f in v]
        assert len(seen) == len(set(seen))


class TestGraphMetrics:
    def _g(self, edges, n=4):
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            adj[i, j] = True
        return Digraph(adj, [str(i) for i in range(n)])

    def test_identical(self):
        g = self._g([(0, 1), (2, 3)])
        assert shd(g, g) == 0 and edge_f1(g, g) == 1.0

    def test_single_reversal(self):
        assert shd(self._g([(0, 1)]), self._g([(1, 0)])) == 1

    def test_f1_two_thirds(self):
        truth = self._g([(0, 1), (1, 2), (2, 3)])
        est = self._g([(0, 1), (1, 2), (0, 3)])
        assert edge_f1(est, truth) == pytest.approx(2 / 3)

    def test_missing_and_extra(self):
        truth = self._g([(0, 1), (1, 2)])
        est = self._g([(0, 1), (0, 2)])
        assert shd(est, truth) == 2

    def test_empty_estimate(self):
        assert edge_f1(self._g([]), self._g([(0, 1)])) == 0.0
        assert edge_f1(self._g([]), self._g([])) == 1.0

    def test_node_mismatch(self):
        with pytest.raises(GraphError):
            shd(self._g([], n=3), self._g([], n=4))


class TestBootstrap:
    def test_single_run_degenerate(self):
        X = _chain_dataset(n=300, seed=11)
        ep = bootstrap_ensemble(X, B=1, lam=0.03, seed=0)
        assert set(np.unique(ep.p)) <= {0.0, 1.0}
        assert ep.bootstrap_count == 1

    def test_chain_true_edges_high_probability(self):
        X = _chain_dataset(n=500, seed=12)
        ep = bootstrap_ensemble(X, B=10, lam=0.03, seed=1)
        assert ep.p[0, 1] >= 0.8 and ep.p[1, 2] >= 0.8

    def test_noise_low_probability(self):
        X = np.random.default_rng(13).standard_normal((300, 4))
        ep = bootstrap_ensemble(X, B=10, lam=0.1, seed=2)
        off = ep.p[~np.eye(4, dtype=bool)]
        assert off.max() < 0.5

    def test_soft_roles_match_hard_for_single_run(self):
        # with a p in {0,1} ensemble the argmax role reduces to hard assignment
        X = _chain_dataset(n=400, seed=14)
        ep = bootstrap_ensemble(X, B=1, lam=0.03, seed=3)
        resample = np.random.default_rng(3).integers(0, 400, size=400)
        hard = assign_roles(threshold_to_dag(notears_fit(X[resample], 0.03), 0.1), 2)
        assert soft_roles(ep, 2) == hard

    def test_mean_confidence_exposed(self):
        X = _chain_dataset(n=300, seed=15)
        ep = bootstrap_ensemble(X, B=5, lam=0.03, seed=4)
        assert 0.0 < ep.mean_confidence <= 1.0

    def test_all_skipped_raises(self):
        X = _chain_dataset(n=200, seed=16)
        with pytest.raises(GraphError, match="bootstrap"):
            bootstrap_ensemble(X, B=2, lam=0.03, seed=5,
                               opts=SolverOptions(max_dual_iters=1))
