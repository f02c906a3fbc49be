import numpy as np
import pytest

from flnn import verify
from flnn.baseline import Optimizer, SgdConfig, backprop_gradient, train_baseline
from flnn.data import Dataset
from flnn.divergence import ActivationKind
from flnn.network import Loss, NetworkSpec, Weights, feed_forward, one_hot

K = ActivationKind


class TestBackpropGradient:
    def test_matches_finite_differences(self):
        r = verify.check_backprop_gradients(nets=4)
        assert r.passed, r.detail

    def test_zero_at_zero_loss(self, rng):
        spec = NetworkSpec((3, 4, 2), (K.RELU,), Loss.MSE)
        w = Weights.init_gaussian(spec, 0)
        X = rng.normal(size=(3, 6))
        _, Y = feed_forward(spec, w, X)  # targets equal predictions
        grads = backprop_gradient(spec, w, X, Y, rho=0.0)
        assert max(np.linalg.norm(g) for g in grads) <= 1e-10

    def test_decay_term_alone(self, rng):
        spec = NetworkSpec((3, 4, 2), (K.RELU,), Loss.MSE)
        w = Weights.init_gaussian(spec, 1)
        X = rng.normal(size=(3, 5))
        _, Y = feed_forward(spec, w, X)
        rho = 0.3
        grads = backprop_gradient(spec, w, X, Y, rho=rho)
        for g, W in zip(grads, w.mats):
            np.testing.assert_allclose(g, 2.0 * rho * W, atol=1e-10)


class TestSgdConfig:
    def test_default_learning_rates(self):
        assert SgdConfig(optimizer=Optimizer.SGD).lr == 1e-2
        assert SgdConfig(optimizer=Optimizer.ADAM).lr == 1e-3
        assert SgdConfig(optimizer=Optimizer.ADAM, learning_rate=0.5).lr == 0.5


class TestTrainBaseline:
    # seed 1 starts the single hidden unit live (positive weights); seed 0
    # would begin on the dead side of the ReLU with an exactly zero gradient
    LIVE_SEED = 1

    def _fittable(self, rng, m=16):
        # single effective neuron: y = 2 * relu(x) on positive inputs
        spec = NetworkSpec((1, 1, 1), (K.RELU,), Loss.MSE)
        X = np.abs(rng.normal(size=(1, m))) + 0.1
        Y = 2.0 * X
        return spec, Dataset(X, Y, "train")

    def test_linear_neuron_fits(self, rng):
        spec, ds = self._fittable(rng)
        cfg = SgdConfig(optimizer=Optimizer.ADAM, learning_rate=5e-2, epochs=400,
                        batch_size=16, seed=self.LIVE_SEED)
        w, report = train_baseline(spec, ds, cfg)
        assert report.rows[-1].std_obj <= 1e-3

    def test_divergence_detection(self, rng):
        # sigmoid hidden units cannot die, so an absurd step size genuinely
        # overflows the output weights within a few updates
        spec = NetworkSpec((1, 2, 1), (K.SIGMOID,), Loss.MSE)
        X = np.abs(rng.normal(size=(1, 16))) + 0.1
        ds = Dataset(X, 2.0 * X, "train")
        cfg = SgdConfig(optimizer=Optimizer.SGD, learning_rate=1e150, epochs=5,
                        batch_size=16, seed=0)
        _, report = train_baseline(spec, ds, cfg)
        assert any("diverged" in w for w in report.warnings)

    def test_determinism(self, rng):
        spec = NetworkSpec((4, 6, 3), (K.RELU,), Loss.CROSS_ENTROPY)
        X = rng.normal(size=(4, 30))
        Y = one_hot(rng.integers(0, 3, 30), 3)
        ds = Dataset(X, Y, "train")
        cfg = SgdConfig(optimizer=Optimizer.ADAM, epochs=3, batch_size=10, seed=4)
        w1, r1 = train_baseline(spec, ds, cfg)
        w2, r2 = train_baseline(spec, ds, cfg)
        for a, b in zip(w1.mats, w2.mats):
            assert np.array_equal(a, b)
        assert [r.std_obj for r in r1.rows] == [r.std_obj for r in r2.rows]

    def test_sgd_improves_over_init(self, rng):
        spec = NetworkSpec((4, 8, 3), (K.RELU,), Loss.CROSS_ENTROPY)
        X = rng.normal(size=(4, 60))
        labels = rng.integers(0, 3, 60)
        ds = Dataset(X, one_hot(labels, 3), "train")
        cfg = SgdConfig(optimizer=Optimizer.SGD, learning_rate=0.5, epochs=50,
                        batch_size=20, seed=0)
        _, report = train_baseline(spec, ds, cfg)
        assert report.rows[-1].std_obj < report.rows[0].std_obj
