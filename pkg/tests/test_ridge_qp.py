"""Subset shrinkage regression: examples, invariants, error paths."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heca.errors import InfeasibleError, ValidationError
from heca.ridge_qp import (EPSILON_DEFAULT, SubsetRidgeProblem,
                           solve_subset_ridge)

from oracles import grid_search_simplex, projected_gradient_qp


def problem(Y, F, subset, lam, eps=EPSILON_DEFAULT):
    return SubsetRidgeProblem(targets=Y, forecasts=F, subset=subset,
                              shrinkage=lam, epsilon=eps)


class TestExamples:
    def test_singleton_subset_is_forced(self, rng):
        F = rng.normal(size=(6, 4))
        Y = rng.normal(size=6)
        sol = solve_subset_ridge(problem(Y, F, (2,), 0.7))
        expected = np.zeros(4)
        expected[2] = 1.0
        np.testing.assert_allclose(sol.weights, expected, atol=1e-15)

    def test_huge_shrinkage_reaches_equal_weights(self, rng):
        # Derived oracle: projected gradient run to 1e-12 stationarity
        # confirms the equal-weights limit.
        F = rng.normal(size=(10, 6))
        Y = rng.normal(size=10)
        lam = 1e8 * np.linalg.norm(F.T @ F, 2)
        for c in (2, 3, 4):
            subset = tuple(range(c))
            sol = solve_subset_ridge(problem(Y, F, subset, lam))
            on = sol.weights[list(subset)]
            assert np.abs(on - 1.0 / c).max() < 1e-4
            A = F[:, list(subset)]
            H = A.T @ A + lam * np.eye(c)
            a = A.T @ Y + lam / c
            ref = projected_gradient_qp(H, a)
            assert np.abs(on - ref).max() < 1e-6

    def test_random_instance_matches_grid_oracle(self):
        # Frozen instance: 5 experts, window 8, cardinality 3.
        rng = np.random.default_rng(2024)
        F = rng.normal(size=(8, 5))
        Y = rng.normal(size=8)
        subset = (0, 2, 4)
        lam = 0.35
        sol = solve_subset_ridge(problem(Y, F, subset, lam))
        _, oracle_val = grid_search_simplex(Y, F[:, list(subset)], lam, 1 / 3)
        assert abs(sol.objective - oracle_val) < 1e-5


class TestInvariants:
    def test_kkt_certificate(self, rng):
        for _ in range(50):
            m = int(rng.integers(2, 7))
            c = int(rng.integers(1, m + 1))
            F = rng.normal(size=(int(rng.integers(2, 12)), m))
            Y = rng.normal(size=F.shape[0])
            subset = tuple(sorted(rng.choice(m, size=c, replace=False)))
            sol = solve_subset_ridge(problem(Y, F, subset, float(rng.uniform(0, 2))))
            assert sol.kkt_residual <= 1e-8
            on = sol.weights[list(subset)]
            off = np.delete(sol.weights, list(subset))
            assert (off == 0).all()
            assert (on >= EPSILON_DEFAULT).all() and (on <= 1.0).all()
            assert abs(sol.weights.sum() - 1.0) <= 1e-10

    def test_distance_to_target_monotone_in_lambda(self, rng):
        F = rng.normal(size=(9, 5))
        Y = rng.normal(size=9)
        subset = (0, 1, 3)
        dists = []
        for lam in np.linspace(0.01, 4.0, 25):
            sol = solve_subset_ridge(problem(Y, F, subset, float(lam)))
            dists.append(np.linalg.norm(sol.weights[list(subset)] - 1 / 3))
        diffs = np.diff(dists)
        assert (diffs <= 1e-10).all()

    def test_zero_residual_case(self, rng):
        F = rng.normal(size=(7, 4))
        b = np.array([1 / 3, 1 / 3, 1 / 3, 0.0])
        Y = F @ b
        sol = solve_subset_ridge(problem(Y, F, (0, 1, 2), 1.3))
        assert sol.objective <= 1e-18
        np.testing.assert_allclose(sol.weights[:3], 1 / 3, atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.permutations(list(range(5))))
    def test_permutation_equivariance(self, seed, perm):
        rng = np.random.default_rng(seed)
        F = rng.normal(size=(6, 5))
        Y = rng.normal(size=6)
        subset = (0, 2, 3)
        perm = list(perm)
        sol = solve_subset_ridge(problem(Y, F, subset, 0.4))
        p_subset = tuple(sorted(perm[j] for j in subset))
        sol_p = solve_subset_ridge(problem(Y, F[:, np.argsort(perm)],
                                           p_subset, 0.4))
        np.testing.assert_allclose(sol_p.weights[perm], sol.weights,
                                   atol=1e-9)
        assert abs(sol.objective - sol_p.objective) < 1e-9


class TestValidationAndSerialization:
    def test_infeasible_epsilon(self):
        with pytest.raises(InfeasibleError):
            problem(np.ones(3), np.ones((3, 4)), (0, 1, 2), 0.1, eps=0.5)

    def test_non_finite_data(self):
        F = np.ones((3, 2))
        F[1, 1] = np.nan
        with pytest.raises(ValidationError):
            problem(np.ones(3), F, (0, 1), 0.1)

    def test_empty_subset(self):
        with pytest.raises(ValidationError):
            problem(np.ones(3), np.ones((3, 2)), (), 0.1)

    def test_honest_epsilon_mode(self, rng):
        # A large epsilon forces genuinely active lower bounds.
        F = rng.normal(size=(8, 3))
        Y = F[:, 0] * 3.0
        sol = solve_subset_ridge(problem(Y, F, (0, 1, 2), 0.0, eps=0.1))
        on = sol.weights[:3]
        assert (on >= 0.1 - 1e-12).all()
        assert sol.kkt_residual <= 1e-7

    def test_json_payload(self, rng):
        F = rng.normal(size=(5, 3))
        sol = solve_subset_ridge(problem(rng.normal(size=5), F, (0, 2), 0.2))
        payload = json.loads(sol.to_json())
        assert set(payload) == {"weights", "objective", "kkt_residual"}
        assert len(payload["weights"]) == 3
