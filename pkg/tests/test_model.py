import numpy as np
import pytest

from utrcaf import model
from utrcaf.errors import ConfigError, DimensionError, DivergenceError, InvalidParameterError, LabelError
from utrcaf.rng import stream


def linear_params(W: np.ndarray, b=None, v=None, g=None) -> model.ModelParams:
    p, d = W.shape
    k = 2 if v is None else np.asarray(v).shape[0]
    arch = model.ArchitectureSpec(p, (), d, k)
    v = np.eye(k, d) + 0.5 if v is None else v
    g = np.ones(k) if g is None else g
    return model.ModelParams([(W, np.zeros(d) if b is None else b)], v, g, arch)


class FixedDraw:
    """Stand-in generator whose ``uniform`` always returns ``value``."""

    def __init__(self, value: float):
        self.value = value

    def uniform(self, low, high, size=None):
        return self.value if size is None else np.full(size, self.value)


def blobs(n: int = 200, seed: int = 0) -> model.Dataset:
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(scale=0.5, size=(n, 2)) + np.where(y[:, None] == 1, 3.0, -3.0)
    return model.Dataset(X, y, "blobs")


class TestArchitecture:
    def test_layer_sizes(self):
        assert model.ArchitectureSpec(5, (7, 3), 4, 2).layer_sizes == [5, 7, 3, 4]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"input_dim": 0},
            {"input_dim": 3, "bottleneck_dim": 1},
            {"input_dim": 3, "num_classes": 1},
            {"input_dim": 3, "hidden_dims": (0,)},
            {"input_dim": 3, "activation": "gelu"},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            model.ArchitectureSpec(**kwargs)

    def test_train_config_bounds(self):
        with pytest.raises(ConfigError):
            model.TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            model.TrainConfig(momentum=1.0)
        with pytest.raises(ConfigError):
            model.TrainConfig(label_smoothing=1.0)


class TestDataset:
    def test_label_out_of_range_rejected_by_training(self):
        ds = model.Dataset(np.zeros((2, 2)), np.array([0, 5]))
        with pytest.raises((ConfigError, LabelError)):
            model.train_source(ds, model.ArchitectureSpec(2, (), 2, 2), model.TrainConfig(epochs=1))

    def test_non_finite_features(self):
        with pytest.raises(ValueError):
            model.Dataset(np.array([[np.nan, 1.0]]))

    def test_empty(self):
        with pytest.raises(ValueError):
            model.Dataset(np.zeros((0, 2)))


class TestEncode:
    def test_identity_layer(self):
        params = linear_params(np.eye(2))
        np.testing.assert_array_equal(model.encode(params, np.array([[1.0, 2.0]])), [[1.0, 2.0]])

    def test_identical_rows(self, small_arch, rng):
        params = model.init_params(small_arch, 3)
        x = rng.normal(size=(1, 3))
        z = model.encode(params, np.vstack([x, x]))
        np.testing.assert_array_equal(z[0], z[1])

    def test_recompute_bitwise(self, rng):
        arch = model.ArchitectureSpec(4, (6, 5), 3, 2)
        params = model.init_params(arch, 9)
        X = rng.normal(size=(7, 4))
        np.testing.assert_array_equal(model.encode(params, X), model.encode(params, X.copy()))

    def test_shape_mismatch(self, small_arch):
        with pytest.raises(DimensionError):
            model.encode(model.init_params(small_arch, 0), np.zeros((2, 5)))


class TestClassify:
    def test_direction_scale_invariance(self, small_arch, rng):
        params = model.init_params(small_arch, 1)
        Z = rng.normal(size=(5, small_arch.bottleneck_dim))
        scaled = model.ModelParams(params.encoder_layers, 7.0 * params.classifier_direction, params.classifier_scale, small_arch)
        np.testing.assert_allclose(model.classify(scaled, Z), model.classify(params, Z), rtol=1e-12, atol=1e-14)

    def test_zero_scale(self, small_arch, rng):
        params = model.init_params(small_arch, 1)
        params = model.ModelParams(params.encoder_layers, params.classifier_direction, np.zeros(3), small_arch)
        np.testing.assert_array_equal(model.classify(params, rng.normal(size=(4, 4))), 0.0)

    def test_analytic(self):
        params = linear_params(np.eye(2), v=np.eye(2), g=np.array([2.0, 3.0]))
        np.testing.assert_allclose(model.classify(params, np.array([[1.0, 1.0]])), [[2.0, 3.0]])

    def test_zero_direction_row(self):
        params = linear_params(np.eye(2), v=np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(InvalidParameterError):
            model.classify(params, np.ones((1, 2)))


class TestBackward:
    def test_matches_finite_differences_relu(self, rng):
        # away from kinks a relu network is smooth, so differences still apply
        arch = model.ArchitectureSpec(3, (4,), 3, 2, "relu")
        params = model.init_params(arch, 2)
        X = rng.normal(size=(5, 3))
        dl = rng.normal(size=(5, 2))

        def value(vec):
            return float((model.classify(params.from_vector(vec), model.encode(params.from_vector(vec), X)) * dl).sum())

        fwd = model.forward(params, X)
        analytic = np.concatenate([g.ravel() for g in model.backward(params, fwd, dlogits=dl)])
        vec = params.to_vector()
        h = 1e-6
        numeric = np.array([(value(vec + h * e) - value(vec - h * e)) / (2 * h) for e in np.eye(vec.size)])
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_gradient_order_matches_arrays(self, small_arch, rng):
        params = model.init_params(small_arch, 0)
        fwd = model.forward(params, rng.normal(size=(3, 3)))
        grads = model.backward(params, fwd, dlogits=np.ones((3, 3)))
        assert [g.shape for g in grads] == [a.shape for a in params.arrays()]


class TestPerturb:
    def test_zero_range_is_identity(self, small_arch):
        params = model.init_params(small_arch, 0)
        for mode in ("scalar", "per_parameter"):
            out = model.perturb_params(params, mode, 0.0, 0.0, stream(0, "t"))
            for a, b in zip(out.arrays(), params.arrays()):
                np.testing.assert_array_equal(a, b)

    def test_scalar_forced_draw(self):
        params = linear_params(np.array([[2.0, 1.0]]))
        out = model.perturb_params(params, "scalar", -0.2, 0.2, FixedDraw(0.1))
        assert out.encoder_layers[0][0][0, 0] == pytest.approx(2.2)

    def test_per_parameter_reproducible(self, small_arch):
        params = model.init_params(small_arch, 0)
        a = model.perturb_params(params, "per_parameter", -0.05, 0.05, stream(4, "p"))
        b = model.perturb_params(params, "per_parameter", -0.05, 0.05, stream(4, "p"))
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())

    def test_classifier_untouched_and_input_unmodified(self, small_arch):
        params = model.init_params(small_arch, 0)
        before = params.to_vector().copy()
        out = model.perturb_params(params, "per_parameter", -0.5, 0.5, stream(1, "p"))
        np.testing.assert_array_equal(params.to_vector(), before)
        np.testing.assert_array_equal(out.classifier_direction, params.classifier_direction)
        np.testing.assert_array_equal(out.classifier_scale, params.classifier_scale)
        assert not np.array_equal(out.encoder_layers[0][0], params.encoder_layers[0][0])

    def test_empty_range(self, small_arch):
        with pytest.raises(ConfigError):
            model.perturb_params(model.init_params(small_arch, 0), "scalar", 0.1, -0.1, stream(0, "p"))


class TestTrainSource:
    def test_separable_blobs(self):
        ds = blobs()
        params = model.train_source(ds, model.ArchitectureSpec(2, (8,), 4, 2), model.TrainConfig(epochs=50))
        assert model.accuracy(params, ds) >= 0.99

    def test_zero_epochs_returns_init(self, small_arch):
        ds = model.Dataset(np.ones((4, 3)), np.array([0, 1, 2, 0]))
        params = model.train_source(ds, small_arch, model.TrainConfig(epochs=0, seed=5))
        np.testing.assert_array_equal(params.to_vector(), model.init_params(small_arch, 5).to_vector())

    def test_deterministic(self):
        ds = blobs(60)
        arch = model.ArchitectureSpec(2, (5,), 3, 2)
        cfg = model.TrainConfig(epochs=5, seed=3)
        a = model.train_source(ds, arch, cfg)
        b = model.train_source(ds, arch, cfg)
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())

    def test_divergence_reports_epoch_and_rate(self):
        ds = model.Dataset(np.random.default_rng(0).normal(size=(8, 2)), np.array([0, 1] * 4))
        cfg = model.TrainConfig(learning_rate=1e300, epochs=3)
        with np.errstate(all="ignore"), pytest.raises(DivergenceError, match=r"epoch \d+ \(learning_rate=1e\+300\)"):
            model.train_source(ds, model.ArchitectureSpec(2, (), 3, 2), cfg)

    def test_normalized_bottleneck_has_unit_rms(self):
        ds = blobs(100)
        params = model.train_source(ds, model.ArchitectureSpec(2, (8,), 4, 2), model.TrainConfig(epochs=5))
        z = model.encode(params, ds.features)
        np.testing.assert_allclose(np.sqrt((z**2).mean(axis=0)), 1.0, rtol=1e-12)


class TestNormalizeBottleneck:
    def test_logits_preserved(self, rng):
        arch = model.ArchitectureSpec(4, (6,), 5, 3)
        params = model.init_params(arch, 8)
        X = rng.normal(size=(30, 4))
        out = model.normalize_bottleneck(params, X)
        np.testing.assert_allclose(model.classify(out, model.encode(out, X)), model.classify(params, model.encode(params, X)), rtol=1e-11, atol=1e-12)

    def test_dead_channel_left_alone(self):
        W = np.array([[1.0, 0.0], [2.0, 0.0]])
        params = linear_params(W)
        out = model.normalize_bottleneck(params, np.array([[1.0, 1.0], [2.0, -1.0]]))
        assert np.all(np.isfinite(out.to_vector()))


class TestMomentumSgd:
    def test_zero_gradient_keeps_params_bitwise(self, small_arch):
        params = model.init_params(small_arch, 0)
        opt = model.MomentumSGD(0.1, 0.9)
        out = opt.step(params, [np.zeros_like(a) for a in params.arrays()])
        np.testing.assert_array_equal(out.to_vector(), params.to_vector())

    def test_heavy_ball_update(self):
        params = linear_params(np.array([[1.0, 1.0]]))
        opt = model.MomentumSGD(0.5, 0.9)
        grads = [np.ones_like(a) for a in params.arrays()]
        p1 = opt.step(params, grads)
        p2 = opt.step(p1, grads)
        # buffer after two steps is 1 + 0.9 = 1.9
        assert p2.encoder_layers[0][0][0, 0] == pytest.approx(1.0 - 0.5 - 0.5 * 1.9)

    def test_trainable_mask(self, small_arch):
        params = model.init_params(small_arch, 0)
        opt = model.MomentumSGD(0.1, 0.0)
        mask = [True] * params.num_encoder_arrays() + [False, False]
        out = opt.step(params, [np.ones_like(a) for a in params.arrays()], mask)
        np.testing.assert_array_equal(out.classifier_direction, params.classifier_direction)
        assert not np.array_equal(out.encoder_layers[0][0], params.encoder_layers[0][0])


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path, small_arch):
        params = model.init_params(small_arch, 11)
        path = tmp_path / "m.json"
        model.save_params(params, path)
        back = model.load_params(path)
        np.testing.assert_array_equal(back.to_vector(), params.to_vector())
        assert back.arch == params.arch

    def test_schema(self, tmp_path, small_arch):
        import json

        path = tmp_path / "m.json"
        model.save_params(model.init_params(small_arch, 0), path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"arch", "encoder_layers", "classifier_direction", "classifier_scale"}

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"arch": {"input_dim": 2}}')
        with pytest.raises(InvalidParameterError):
            model.load_params(path)

    def test_vector_round_trip(self, small_arch):
        params = model.init_params(small_arch, 2)
        np.testing.assert_array_equal(params.from_vector(params.to_vector()).to_vector(), params.to_vector())
