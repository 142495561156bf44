import numpy as np
import pytest

from helpers import numerical_gradient, relative_error
from tordistill.losses import mse_loss
from tordistill.models import build_teacher
from tordistill.nn import (
    AdamState,
    BatchNorm,
    Dense,
    DimensionError,
    Dropout,
    ForwardStateError,
    LrSchedule,
    Mode,
    Network,
    ReLU,
    Sequential,
    adam_step,
    lr_at,
)
from tordistill.nn.checkpoint import CheckpointError, read_tensors, write_tensors


def hand_set_network():
    trunk = Sequential("trunk").add_module(Dense(1, 2, name="dense0")).add_module(ReLU())
    trunk[0].weight[...] = [[1.0, -2.0]]
    trunk[0].bias[...] = [0.1, 0.5]
    head = Dense(2, 1, name="head_out")
    head.weight[...] = [[3.0], [4.0]]
    head.bias[...] = [-1.0]
    return Network(trunk, [head], ["out"], input_width=1)


class TestForward:

    def test_identity_dense_layer(self):
        layer = Dense(2, 2)
        layer.weight[...] = np.eye(2)
        layer.bias[...] = 0.0
        assert np.array_equal(layer.forward(np.array([[1.0, 2.0]])), [[1.0, 2.0]])

    def test_dropout_is_identity_in_inference(self, rng):
        layer = Dropout(0.5, rng=rng)
        layer.evaluate()
        x = rng.normal(size=(8, 4))
        assert np.array_equal(layer.forward(x), x)

    def test_hand_evaluated_mlp(self):
        # hidden = relu([0.3 + 0.1, -0.6 + 0.5]) = [0.4, 0]; out = 3 * 0.4 - 1
        out = hand_set_network().forward([[0.3]], Mode.INFER)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(0.2)

    def test_one_column_per_head(self):
        trunk = Sequential("trunk").add_module(Dense(1, 4)).add_module(ReLU())
        network = Network(trunk, [Dense(4, 1), Dense(4, 1)], ["tor", "d"], input_width=1)
        assert network.forward(np.zeros((5, 1))).shape == (5, 2)

    def test_wrong_input_width(self):
        with pytest.raises(DimensionError):
            hand_set_network().forward(np.zeros((3, 2)))

    def test_inference_does_not_cache(self):
        network = hand_set_network()
        network.forward([[0.3]], Mode.INFER)
        assert network.last_hidden is None
        with pytest.raises(ForwardStateError):
            network.backward(np.ones((1, 1)))


class TestBackward:

    def test_backward_without_forward(self):
        with pytest.raises(ForwardStateError):
            hand_set_network().backward(np.ones((1, 1)))

    def test_zero_output_gradient(self, rng):
        network = build_teacher(seed=3, dropout_rate=0.0)
        network.forward(rng.normal(size=(12, 1)), Mode.TRAIN)
        grads = network.backward(np.zeros((12, 1)))
        assert all(not np.any(g) for g in grads.values())

    def test_gradient_shape_mismatch(self, rng):
        network = build_teacher(seed=3)
        network.forward(rng.normal(size=(6, 1)), Mode.TRAIN)
        with pytest.raises(DimensionError):
            network.backward(np.ones((6, 2)))

    def test_single_dense_mse_matches_finite_differences(self, rng):
        network = Network(Sequential("trunk"), [Dense(3, 1, rng=rng)], ["out"], input_width=3)
        x = rng.normal(size=(10, 3))
        target = rng.normal(size=(10, 1))

        def objective():
            return mse_loss(network.forward(x, Mode.TRAIN), target).value

        result = mse_loss(network.forward(x, Mode.TRAIN), target)
        network.zero_grad()
        grads = network.backward(result.grad)
        for name, param in network.named_parameters().items():
            numeric = numerical_gradient(objective, param)
            assert relative_error(grads[name], numeric) < 1e-4, name

    def test_teacher_mlp_matches_finite_differences(self, rng):
        network = build_teacher(seed=5, dropout_rate=0.0)
        x = rng.normal(size=(16, 1))
        upstream = rng.normal(size=(16, 1))

        def objective():
            return float(np.sum(network.forward(x, Mode.TRAIN) * upstream))

        network.forward(x, Mode.TRAIN)
        network.zero_grad()
        grads = {k: v.copy() for k, v in network.backward(upstream).items()}
        for name, param in network.named_parameters().items():
            numeric = numerical_gradient(objective, param)
            assert relative_error(grads[name], numeric) < 1e-3, name

    def test_two_heads_sum_into_trunk(self, rng):
        trunk = Sequential("trunk").add_module(Dense(1, 6, rng=rng)).add_module(ReLU())
        network = Network(trunk, [Dense(6, 1, rng=rng), Dense(6, 1, rng=rng)], ["tor", "d"], input_width=1)
        x = rng.normal(size=(9, 1))
        upstream = rng.normal(size=(9, 2))

        def objective():
            return float(np.sum(network.forward(x, Mode.TRAIN) * upstream))

        network.forward(x, Mode.TRAIN)
        network.zero_grad()
        grads = {k: v.copy() for k, v in network.backward(upstream).items()}
        numeric = numerical_gradient(objective, trunk[0].weight)
        assert relative_error(grads["trunk.0.weight"], numeric) < 1e-4

    def test_input_gradient_is_available(self, rng):
        network = hand_set_network()
        network.forward([[0.3]], Mode.TRAIN)
        network.backward(np.ones((1, 1)))
        # d out / d x = 3 * 1 through the only active unit
        assert network.input_gradient[0, 0] == pytest.approx(3.0)


class TestLayers:

    def test_batchnorm_train_normalizes(self, rng):
        layer = BatchNorm(5)
        x = rng.normal(loc=7.0, scale=3.0, size=(64, 5))
        out = layer.forward(x)
        assert np.all(np.abs(out.mean(axis=0)) < 1e-6)
        assert np.allclose(out.var(axis=0), 1.0, atol=1e-4)

    def test_batchnorm_inference_uses_running_statistics(self, rng):
        layer = BatchNorm(2)
        layer.load_buffers(np.array([1.0, -1.0]), np.array([4.0, 0.25]))
        layer.evaluate()
        x = rng.normal(size=(3, 2))
        expected = (x - [1.0, -1.0]) / np.sqrt(np.array([4.0, 0.25]) + layer.epsilon)
        assert np.allclose(layer.forward(x), expected)

    def test_batchnorm_running_variance_non_negative(self, rng):
        layer = BatchNorm(3)
        for _ in range(20):
            layer.forward(rng.normal(size=(4, 3)))
        assert np.all(layer.running_var >= 0)

    def test_batchnorm_input_gradient(self, rng):
        layer = BatchNorm(4)
        layer.scale[...] = rng.uniform(0.5, 2.0, size=4)
        x = rng.normal(size=(8, 4))
        upstream = rng.normal(size=(8, 4))

        layer.forward(x)
        analytic = layer.backward(upstream)
        numeric = numerical_gradient(lambda: float(np.sum(layer.forward(x) * upstream)), x)
        assert relative_error(analytic, numeric) < 1e-4

    def test_dropout_preserves_expectation(self, rng):
        layer = Dropout(0.5, rng=rng)
        x = np.full((10_000, 10), 2.0)
        out = layer.forward(x)
        assert abs(out.mean() - 2.0) < 0.04
        assert set(np.unique(out)) <= {0.0, 4.0}

    def test_dropout_backward_uses_same_mask(self, rng):
        layer = Dropout(0.3, rng=rng)
        x = rng.normal(size=(5, 5))
        out = layer.forward(x)
        grad = layer.backward(np.ones_like(x))
        assert np.allclose(grad * x, out)

    def test_dropout_rate_bounds(self):
        with pytest.raises(ValueError):
            Dropout(1.0)

    def test_sequential_rejects_non_modules(self):
        with pytest.raises(TypeError):
            Sequential().add_module("relu")


class TestAdam:

    def test_zero_gradient_keeps_parameters(self):
        params = {"w": np.array([0.5, -0.5])}
        adam_step(AdamState(), params, {"w": np.zeros(2)})
        assert np.array_equal(params["w"], [0.5, -0.5])

    def test_first_step_is_unit_step(self):
        params = {"w": np.array([0.0])}
        adam_step(AdamState(learning_rate=0.1), params, {"w": np.array([1.0])})
        assert params["w"][0] == pytest.approx(-0.1, rel=1e-6)

    def test_identical_parameters_stay_identical(self, rng):
        state = AdamState(learning_rate=0.01)
        params = {"a": np.array([1.0, 2.0]), "b": np.array([1.0, 2.0])}
        for _ in range(25):
            g = rng.normal(size=2)
            adam_step(state, params, {"a": g.copy(), "b": g.copy()})
        assert np.array_equal(params["a"], params["b"])

    def test_step_counter_and_second_moment(self, rng):
        state = AdamState()
        params = {"w": np.zeros(3)}
        for step in range(1, 4):
            adam_step(state, params, {"w": rng.normal(size=3)})
            assert state.step == step
        assert np.all(state.second_moment["w"] >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})


class TestLrSchedule:

    @pytest.mark.parametrize("base, drops, epoch, expected", [
        (1e-3, [70], 0, 1e-3),
        (1e-3, [70], 70, 1e-4),
        (7.5e-4, [40, 80], 85, 7.5e-6),
        (1e-3, [40, 80], 39, 1e-3),
        (1e-3, [], 99, 1e-3),
    ])
    def test_rate_at(self, base, drops, epoch, expected):
        assert lr_at(LrSchedule(base, drops), epoch) == pytest.approx(expected)

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            LrSchedule(1e-3, [70]).rate_at(-1)


class TestCheckpointFormat:

    def test_tensors_and_metadata_survive(self, tmp_path, rng):
        tensors = {"a.weight": rng.normal(size=(3, 2)), "a.bias": rng.normal(size=2)}
        path = write_tensors(tmp_path / "x.ckpt", tensors, {"role": "teacher"})
        loaded, metadata = read_tensors(path)
        assert metadata == {"role": "teacher"}
        for name, tensor in tensors.items():
            assert np.array_equal(loaded[name], tensor)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint at all, just bytes")
        with pytest.raises(CheckpointError):
            read_tensors(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_tensors(tmp_path / "missing.ckpt")

    def test_truncated_payload(self, tmp_path, rng):
        path = write_tensors(tmp_path / "t.ckpt", {"w": rng.normal(size=(10, 10))})
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError):
            read_tensors(path)
