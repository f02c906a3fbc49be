import numpy as np
import pytest

from flnn import verify
from flnn.bcd import (
    ScalingProfile,
    dual_value,
    multi_penalty_objective,
    scale_to_single_lambda,
    train_batched,
    train_full,
    unscale_from_single_lambda,
)
from flnn.data import Dataset
from flnn.divergence import ActivationKind
from flnn.network import (
    Hyperparams,
    LiftedState,
    Loss,
    NetworkSpec,
    Weights,
    feed_forward,
    lifted_objective,
)

K = ActivationKind


def fittable_problem(n=6, hid=8, p=2, m=5, seed=3):
    """Teacher-generated regression data sized so every block subproblem can
    reach zero (enough network capacity per data point)."""
    rng = np.random.default_rng(seed)
    spec = NetworkSpec((n, hid, p), (K.RELU,), Loss.MSE)
    w_true = Weights.init_gaussian(spec, 99)
    X = rng.normal(size=(n, m))
    _, Y = feed_forward(spec, w_true, X)
    return spec, Dataset(X, Y, "train")


class TestTrainFull:
    def test_fittable_data_reaches_zero(self):
        spec, ds = fittable_problem()
        h = Hyperparams(lam=1.0, rho=[0.0], outer_max_iters=20, inner_tol=1e-10,
                        inner_max_iters=5 * 10**4, seed=0)
        _, report = train_full(spec, ds, h)
        assert len(report.rows) <= 20
        assert report.rows[-1].lifted_obj <= 1e-8

    def test_first_alternation_never_increases(self, rng):
        for seed in range(4):
            spec = NetworkSpec((3, 4, 2), (K.RELU,), Loss.MSE)
            X = rng.normal(size=(3, 8))
            Y = rng.normal(size=(2, 8))
            ds = Dataset(X, Y, "train")
            h = Hyperparams(lam=2.0, rho=[1e-3], outer_max_iters=1, inner_tol=1e-8,
                            inner_max_iters=5000, seed=seed)
            w0 = Weights.init_gaussian(spec, seed)
            acts, _ = feed_forward(spec, w0, X)
            start = lifted_objective(spec, w0, LiftedState(acts[1:], X, Y), h)
            _, report = train_full(spec, ds, h)
            assert report.rows[0].lifted_obj <= start + 1e-9

    def test_update_order_trace(self):
        spec = NetworkSpec((2, 3, 3, 2), (K.RELU, K.RELU), Loss.MSE)
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(2, 6)), rng.normal(size=(2, 6)), "train")
        h = Hyperparams(lam=1.0, rho=[0.0], outer_max_iters=2, inner_max_iters=50, seed=0)
        events = []
        train_full(spec, ds, h, trace=lambda phase, layer: events.append((phase, layer)))
        per_alt = [("x", 2), ("x", 1), ("w", 2), ("w", 1), ("w", 0)]
        assert events[: len(per_alt)] == per_alt
        assert events == per_alt * (len(events) // len(per_alt))

    def test_block_monotone_descent(self):
        r = verify.check_block_descent(nets=6)
        assert r.passed, r.detail

    def test_lifted_below_standard_single_hidden(self, rng):
        # with one hidden layer the activation sweep is an exact block solve,
        # so every recorded row satisfies the sandwich up to solver slack
        spec = NetworkSpec((3, 5, 2), (K.RELU,), Loss.MSE)
        ds = Dataset(rng.normal(size=(3, 10)), rng.normal(size=(2, 10)), "train")
        tol = 1e-8
        h = Hyperparams(lam=3.0, rho=[1e-4], outer_max_iters=6, inner_tol=tol,
                        inner_max_iters=10**4, seed=1)
        _, report = train_full(spec, ds, h)
        for row in report.rows:
            assert row.lifted_obj <= row.std_obj + 10 * tol

    def test_determinism(self):
        spec, ds = fittable_problem()
        h = Hyperparams(lam=1.0, rho=[1e-4], outer_max_iters=4, inner_max_iters=200, seed=5)
        w1, r1 = train_full(spec, ds, h)
        w2, r2 = train_full(spec, ds, h)
        for a, b in zip(w1.mats, w2.mats):
            assert np.array_equal(a, b)
        for x, y in zip(r1.rows, r2.rows):
            assert (x.lifted_obj, x.std_obj, x.train_acc) == (y.lifted_obj, y.std_obj, y.train_acc)


class TestTrainBatched:
    def test_reduces_to_full_bitwise(self):
        r = verify.check_batched_reduction()
        assert r.passed, r.detail

    def test_trajectory_matches_full_with_k_alternations(self, rng):
        spec = NetworkSpec((3, 4, 2), (K.RELU,), Loss.MSE)
        ds = Dataset(rng.normal(size=(3, 9)), rng.normal(size=(2, 9)), "train")
        base = dict(lam=1.5, rho=[1e-3], inner_tol=1e-8, inner_max_iters=2000, seed=11)
        w_full, r_full = train_full(spec, ds, Hyperparams(outer_max_iters=3, **base))
        w_b, r_b = train_batched(
            spec, ds,
            Hyperparams(gamma=[0.0], batch_size=9, alternations_K=3, outer_max_iters=1, **base),
        )
        for a, b in zip(w_full.mats, w_b.mats):
            np.testing.assert_allclose(a, b, atol=1e-8)
        assert r_full.rows[-1].lifted_obj == pytest.approx(r_b.rows[-1].lifted_obj, abs=1e-8)

    def test_huge_gamma_freezes_weights(self, rng):
        spec = NetworkSpec((3, 4, 2), (K.RELU,), Loss.MSE)
        ds = Dataset(rng.normal(size=(3, 12)), rng.normal(size=(2, 12)), "train")
        h = Hyperparams(lam=1.0, rho=[0.0], gamma=[1e8], batch_size=4,
                        outer_max_iters=1, inner_max_iters=500, seed=2)
        w, _ = train_batched(spec, ds, h)
        w0 = Weights.init_gaussian(spec, 2)
        dev = max(np.abs(a - b).max() for a, b in zip(w.mats, w0.mats))
        assert dev <= 1e-3

    def test_batch_size_guard(self, rng):
        spec = NetworkSpec((3, 4, 2), (K.RELU,), Loss.MSE)
        ds = Dataset(rng.normal(size=(3, 5)), rng.normal(size=(2, 5)), "train")
        with pytest.raises(ValueError):
            train_batched(spec, ds, Hyperparams(batch_size=6, outer_max_iters=1))

    def test_determinism(self, rng):
        spec = NetworkSpec((3, 4, 2), (K.RELU,), Loss.MSE)
        ds = Dataset(rng.normal(size=(3, 12)), rng.normal(size=(2, 12)), "train")
        h = Hyperparams(lam=1.0, rho=[0.0], gamma=[0.5], batch_size=4,
                        outer_max_iters=2, inner_max_iters=100, seed=3)
        w1, r1 = train_batched(spec, ds, h)
        w2, r2 = train_batched(spec, ds, h)
        for a, b in zip(w1.mats, w2.mats):
            assert np.array_equal(a, b)
        assert [r.lifted_obj for r in r1.rows] == [r.lifted_obj for r in r2.rows]


class TestScaling:
    def test_identity_profile(self, rng):
        spec = NetworkSpec((2, 3, 2), (K.RELU,), Loss.MSE)
        w = Weights.init_gaussian(spec, 4)
        X = rng.normal(size=(2, 5))
        s = LiftedState([np.abs(rng.normal(size=(3, 5)))], X, rng.normal(size=(2, 5)))
        prof = ScalingProfile((1.0,), 1.0)
        wb, sb, rho_b, _ = scale_to_single_lambda(spec, prof, w, s, [0.1, 0.1])
        for a, b in zip(wb.mats, w.mats):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(sb.acts[0], s.acts[0])
        assert rho_b == [0.1, 0.1]

    def test_two_layer_equivalence_and_round_trip(self):
        r = verify.check_scaling_equivalence()
        assert r.passed, r.detail

    def test_rejects_sigmoid(self, rng):
        spec = NetworkSpec((2, 3, 2), (K.SIGMOID,), Loss.MSE)
        w = Weights.init_gaussian(spec, 0)
        s = LiftedState([np.full((3, 4), 0.5)], rng.normal(size=(2, 4)), rng.normal(size=(2, 4)))
        with pytest.raises(ValueError):
            scale_to_single_lambda(spec, ScalingProfile((2.0,)), w, s, [0.0, 0.0])

    def test_multi_penalty_objective_matches_lifted_at_equal_lams(self, rng):
        spec = NetworkSpec((2, 3, 2), (K.RELU,), Loss.MSE)
        w = Weights.init_gaussian(spec, 8)
        X = rng.normal(size=(2, 5))
        s = LiftedState([np.abs(rng.normal(size=(3, 5)))], X, rng.normal(size=(2, 5)))
        h = Hyperparams(lam=3.0, rho=[0.2, 0.1])
        assert multi_penalty_objective(spec, w, s, [0.2, 0.1], [3.0]) == pytest.approx(
            lifted_objective(spec, w, s, h), rel=1e-12
        )


class TestDualValue:
    def test_heavier_penalty_shrinks_divergence(self):
        spec, ds = fittable_problem(n=4, hid=5, p=2, m=6, seed=8)
        h = Hyperparams(rho=[1e-4], outer_max_iters=8, inner_tol=1e-8,
                        inner_max_iters=5000, seed=0)
        pens = {}
        for lam in (0.1, 1.0, 10.0):
            from dataclasses import replace
            _, rep = train_full(spec, ds, replace(h, lam=lam), track_blocks=False)
            pens[lam] = rep.final_divergence_penalty
        assert pens[10.0] <= pens[0.1] + 1e-12

    def test_value_below_standard_at_same_weights(self):
        spec, ds = fittable_problem(n=4, hid=6, p=2, m=5, seed=9)
        h = Hyperparams(lam=2.0, rho=[1e-4], outer_max_iters=5, inner_tol=1e-8,
                        inner_max_iters=5000, seed=0)
        _, rep = train_full(spec, ds, h)
        assert rep.rows[-1].lifted_obj <= rep.rows[-1].std_obj + 10 * 1e-8

    def test_dual_value_runs(self):
        spec, ds = fittable_problem(n=4, hid=5, p=2, m=4)
        h = Hyperparams(rho=[0.0], outer_max_iters=3, inner_max_iters=500, seed=0)
        v = dual_value(spec, ds, 2.0, h)
        assert np.isfinite(v) and v >= 0


class TestLowerBoundInvariant:
    def test_x_sweep_from_feed_forward(self):
        r = verify.check_lower_bound(nets=5)
        assert r.passed, r.detail

    def test_feasibility_collapse(self):
        r = verify.check_feasibility_collapse(nets=5)
        assert r.passed, r.detail
