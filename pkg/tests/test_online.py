"""Aggregator state machine, regret accounting, guarantee formulas."""

import math

import numpy as np
import pytest

from heca import online
from heca.errors import ValidationError
from heca.online import (average_regret, efp_step, equal_weight_run,
                         heca_delayed_step, heca_step, init_state,
                         run_aggregator, theorem_bound, vanilla_hedge_run)

from conftest import make_panel
from oracles import hedge_recompute

# Oracle-derived constants (extended-precision scalar recomputation):
# pi_3 after loss (1, 0) with B1 = 1, M = 2 under the two-round-delay rule
# with eta_1 = 2 sqrt(log 2), and pi_2 under the one-round-delay rule with
# eta_1 = sqrt(2 log 2).
PI3_TWO_ROUND = (0.159077336311, 0.840922663689)
PI2_ONE_ROUND = (0.235518200596, 0.764481799404)


class TestHecaStep:
    def test_first_two_rounds_uniform_average(self):
        st = init_state(4, 1.0, 2, "hedge")
        yhat = np.array([1.0, 2.0, 3.0, 6.0])
        f1, st = heca_step(st, None, yhat)
        assert f1 == pytest.approx(3.0)
        f2, st = heca_step(st, None, yhat)
        assert f2 == pytest.approx(3.0)
        np.testing.assert_allclose(st.pi, 0.25)

    def test_identical_losses_keep_uniform(self):
        st = init_state(3, 2.0, 2, "hedge")
        yhat = np.zeros(3)
        for _ in range(2):
            _, st = heca_step(st, None, yhat)
        for _ in range(10):
            _, st = heca_step(st, np.full(3, 0.8), yhat)
            np.testing.assert_allclose(st.pi, 1 / 3, atol=1e-14)

    def test_frozen_third_round_distribution(self):
        st = init_state(2, 1.0, 2, "hedge")
        _, st = heca_step(st, None, np.zeros(2))
        _, st = heca_step(st, None, np.zeros(2))
        _, st = heca_step(st, np.array([1.0, 0.0]), np.zeros(2))
        np.testing.assert_allclose(st.pi, PI3_TWO_ROUND, atol=1e-12)

    def test_loss_validation(self):
        st = init_state(2, 1.0, 2, "hedge")
        with pytest.raises(ValidationError):
            heca_step(st, np.array([1.0, 0.0]), np.zeros(2))  # too early
        _, st = heca_step(st, None, np.zeros(2))
        _, st = heca_step(st, None, np.zeros(2))
        with pytest.raises(ValidationError):
            heca_step(st, np.array([-0.1, 0.0]), np.zeros(2))
        with pytest.raises(ValidationError):
            heca_step(st, np.array([0.1, 0.0]), np.array([np.nan, 0.0]))


class TestDelayedStep:
    def test_first_round_uniform(self):
        st = init_state(3, 1.0, 1, "hedge")
        f, st = heca_delayed_step(st, None, np.array([3.0, 6.0, 9.0]))
        assert f == pytest.approx(6.0)

    def test_single_committee_degenerate(self):
        st = init_state(1, 1.0, 1, "hedge")
        for t in range(1, 8):
            loss = None if t == 1 else np.array([0.5])
            f, st = heca_delayed_step(st, loss, np.array([4.2]))
            assert f == pytest.approx(4.2)
            np.testing.assert_allclose(st.pi, [1.0])

    def test_frozen_second_round_distribution(self):
        st = init_state(2, 1.0, 1, "hedge")
        _, st = heca_delayed_step(st, None, np.zeros(2))
        _, st = heca_delayed_step(st, np.array([1.0, 0.0]), np.zeros(2))
        np.testing.assert_allclose(st.pi, PI2_ONE_ROUND, atol=1e-12)


class TestEfpStep:
    def test_equal_average_losses_keep_uniform(self):
        st = init_state(3, 1.0, 2, "efp")
        yhat = np.zeros(3)
        for _ in range(2):
            _, st = efp_step(st, None, yhat)
        for _ in range(6):
            _, st = efp_step(st, np.array([0.4, 0.4, 0.4]), yhat)
            np.testing.assert_allclose(st.pi, 1 / 3, atol=1e-14)

    def test_coincides_with_hedge_on_first_update(self):
        loss = np.array([0.9, 0.1])
        a = init_state(2, 1.0, 2, "hedge")
        b = init_state(2, 1.0, 2, "efp")
        for _ in range(2):
            _, a = heca_step(a, None, np.zeros(2))
            _, b = efp_step(b, None, np.zeros(2))
        _, a = heca_step(a, loss, np.zeros(2))
        _, b = efp_step(b, loss, np.zeros(2))
        np.testing.assert_allclose(a.pi, b.pi, atol=1e-15)

    def test_delayed_average_matches_recompute(self):
        losses = [[1.0, 0.0], [1.0, 0.0]]
        st = init_state(2, 1.0, 1, "efp")
        _, st = efp_step(st, None, np.zeros(2), delayed=True)
        _, st = efp_step(st, np.array(losses[0]), np.zeros(2), delayed=True)
        _, st = efp_step(st, np.array(losses[1]), np.zeros(2), delayed=True)
        oracle = hedge_recompute(losses, 1.0, 2, delay=1, variant="efp",
                                 n_rounds=3)
        np.testing.assert_allclose(st.pi, oracle[2], atol=1e-13)


class TestRunsAndPaths:
    def test_pi_paths_match_scalar_recompute(self, rng):
        for variant, delay in (("heca", 2), ("heca-delayed", 1),
                               ("efp", 2), ("efp-delayed", 1)):
            for schedule in ("pseudocode", "proof"):
                T, m = 9, 4
                yhats = rng.normal(size=(T, m))
                targets = rng.normal(size=T)
                losses = (targets[:, None] - yhats) ** 2
                run = run_aggregator(yhats, targets, 1.5, variant, schedule)
                oracle = hedge_recompute(
                    [list(r) for r in losses], 1.5, m, delay,
                    "efp" if variant.startswith("efp") else "hedge", schedule)
                np.testing.assert_allclose(run.pis, oracle, atol=1e-12)

    def test_vanilla_hedge_single_expert_zero_regret(self, rng):
        yhats = rng.normal(size=(7, 1))
        targets = rng.normal(size=7)
        run = vanilla_hedge_run(None, yhats, 2.0, targets=targets)
        assert run.report.avg_regret == pytest.approx(0.0, abs=1e-15)

    def test_vanilla_hedge_identical_columns(self, rng):
        col = rng.normal(size=8)
        yhats = np.tile(col[:, None], (1, 3))
        targets = rng.normal(size=8)
        run = vanilla_hedge_run(None, yhats, 1.0, targets=targets)
        np.testing.assert_allclose(run.forecasts, col, atol=1e-12)

    def test_vanilla_hedge_pi_recompute_with_loss_matrix(self, rng):
        losses = rng.uniform(size=(3, 4))
        yhats = rng.normal(size=(3, 4))
        run = vanilla_hedge_run(losses, yhats, 1.0)
        oracle = hedge_recompute([list(r) for r in losses], 1.0, 4, 2)
        np.testing.assert_allclose(run.pis, oracle, atol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValidationError):
            vanilla_hedge_run(rng.uniform(size=(3, 2)),
                              rng.normal(size=(3, 3)), 1.0)

    def test_unrealized_tail_freezes_updates(self, rng):
        T, m = 10, 3
        yhats = rng.normal(size=(T, m))
        targets = rng.normal(size=T)
        targets[-2:] = np.nan
        run = run_aggregator(yhats, targets, 1.0, "heca")
        assert run.report.per_round_loss.shape == (T - 2,)
        assert np.isfinite(run.forecasts).all()

    def test_simplex_and_positivity_invariants(self, rng):
        T, m = 60, 5
        yhats = rng.normal(size=(T, m))
        targets = rng.normal(size=T)
        run = run_aggregator(yhats, targets, 0.5, "heca")
        assert np.abs(run.pis.sum(axis=1) - 1.0).max() <= 1e-12
        assert (run.pis > 0).all()

    def test_order_equivariance(self, rng):
        T, m = 12, 4
        yhats = rng.normal(size=(T, m))
        targets = rng.normal(size=T)
        perm = [2, 0, 3, 1]
        a = run_aggregator(yhats, targets, 1.0, "heca")
        b = run_aggregator(yhats[:, perm], targets, 1.0, "heca")
        np.testing.assert_allclose(b.pis, a.pis[:, perm], atol=1e-14)
        np.testing.assert_allclose(b.forecasts, a.forecasts, atol=1e-12)

    def test_monotone_b_and_rate_identity(self, rng):
        T, m = 40, 4
        yhats = rng.normal(size=(T, m))
        targets = rng.normal(size=T)
        for variant, delay in (("heca", 2), ("heca-delayed", 1)):
            run = run_aggregator(yhats, targets, 0.3, variant)
            assert (np.diff(run.b_path) >= -1e-15).all()
            # After each update, eta * sqrt(s + 1) * B is the same constant.
            const = 2.0 if delay == 2 else math.sqrt(2.0)
            for i in range(delay, T):
                s_next = i + 1 - delay + 1
                got = run.eta_path[i] * math.sqrt(s_next) * run.b_path[i]
                assert got == pytest.approx(const * math.sqrt(math.log(m)),
                                            rel=1e-12)

    def test_two_round_delay_ignores_latest_loss(self, rng):
        T, m = 8, 3
        yhats = rng.normal(size=(T, m))
        targets = rng.normal(size=T)
        run_a = run_aggregator(yhats, targets, 1.0, "heca")
        bumped = targets.copy()
        bumped[T - 2] += 3.0  # alters l_{T-1}, invisible to round T
        run_b = run_aggregator(yhats, bumped, 1.0, "heca")
        np.testing.assert_allclose(run_b.pis[T - 1], run_a.pis[T - 1],
                                   atol=1e-15)


class TestRegretAndBound:
    def test_average_regret_exact_arithmetic(self):
        r, best = average_regret([4.0], [[1.0, 9.0]])
        assert r == pytest.approx(3.0) and best == 1

    def test_zero_when_matching_best(self, rng):
        com = rng.uniform(size=(6, 3))
        r, best = average_regret(com[:, 1], com)
        if com.mean(axis=0).argmin() == 1:
            assert r == pytest.approx(0.0)
        else:
            assert r >= 0 or r <= 0  # sign unconstrained by definition

    def test_negative_regret_is_allowed(self):
        r, _ = average_regret([0.0, 0.0], [[1.0, 2.0], [1.0, 2.0]])
        assert r == pytest.approx(-1.0)

    def test_ties_take_smallest_committee(self):
        _, best = average_regret([1.0], [[2.0, 2.0, 3.0]])
        assert best == 1

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            average_regret([], np.zeros((0, 2)))

    def test_single_committee_bound_is_zero(self):
        value, case, gamma = theorem_bound(1, 50, 1.0, 1.0)
        assert value == 0.0 and case == "exact"

    def test_frozen_bound_values(self):
        value, case, gamma = theorem_bound(2, 100, 1.0, 1.0)
        assert case == "exact"
        assert value == pytest.approx(0.249766383347, abs=1e-12)
        value, case, gamma = theorem_bound(2, 100, 1.0, 2.0)
        assert case == "underestimate" and gamma == pytest.approx(2.0)
        assert value == pytest.approx(0.832554611158, abs=1e-12)
        value, case, gamma = theorem_bound(2, 100, 2.0, 1.0)
        assert case == "overestimate" and gamma == pytest.approx(2.0)
        assert value == pytest.approx(3 * 2 * math.sqrt(math.log(2) / 100),
                                      rel=1e-12)

    def test_delayed_is_exactly_sqrt2_smaller(self):
        for b1, bbar in ((1.0, 1.0), (1.0, 3.0), (2.5, 1.0)):
            plain, _, _ = theorem_bound(7, 321, b1, bbar, "heca")
            delayed, _, _ = theorem_bound(7, 321, b1, bbar, "heca-delayed")
            assert delayed == plain / math.sqrt(2.0)

    def test_bound_validation(self):
        with pytest.raises(ValidationError):
            theorem_bound(2, 10, 0.0, 1.0)
        with pytest.raises(ValidationError):
            theorem_bound(2, 10, 1.0, -1.0)
        with pytest.raises(ValidationError):
            theorem_bound(0, 10, 1.0, 1.0)


class TestEqualWeight:
    def test_perfect_forecasts_zero_loss(self):
        y = np.linspace(0.0, 1.0, 5)
        panel = make_panel(np.tile(y[:, None], (1, 3)), y)
        np.testing.assert_allclose(equal_weight_run(panel), 0.0, atol=1e-30)

    def test_symmetric_errors_cancel(self):
        y = np.ones(4)
        panel = make_panel(np.column_stack([y + 0.3, y - 0.3]), y)
        np.testing.assert_allclose(equal_weight_run(panel), 0.0, atol=1e-30)

    def test_simple_arithmetic(self):
        panel = make_panel(np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]),
                           np.array([3.0, 3.0]))
        np.testing.assert_allclose(equal_weight_run(panel), 1.0)
