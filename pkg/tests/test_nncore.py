import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, max_relative_error, mlp_by_hand
from uvote.errors import ShapeError, TrainingError, UsageError
from uvote.nncore import AdamState, DenseLayer, Trace, adam_step, backward, forward


def random_net(rng, sizes, activation="tanh"):
    return [DenseLayer.init(a, b, activation, rng) for a, b in zip(sizes[:-1], sizes[1:])]


class TestForward:
    def test_identity_layer(self):
        layer = DenseLayer(np.eye(2), np.zeros(2), "identity")
        np.testing.assert_array_equal(forward([layer], [[1.0, 2.0]]), [[1.0, 2.0]])

    def test_relu_layer(self):
        layer = DenseLayer(np.eye(2), np.zeros(2), "relu")
        np.testing.assert_array_equal(forward([layer], [[-1.0, 2.0]]), [[0.0, 2.0]])

    def test_two_layer_matches_hand_evaluation(self):
        w1 = [[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]]
        b1 = [0.1, -0.2, 0.3]
        w2 = [[1.0, -2.0, 0.5]]
        b2 = [0.05]
        layers = [DenseLayer(w1, b1, "relu"), DenseLayer(w2, b2, "identity")]
        x = [0.3, -0.7]
        expected = mlp_by_hand(x, [(w1, b1, "relu"), (w2, b2, "identity")])
        np.testing.assert_allclose(forward(layers, [x])[0], expected, rtol=0, atol=1e-15)

    def test_batch_preserved(self):
        rng = np.random.default_rng(0)
        out = forward(random_net(rng, [3, 5, 2]), rng.normal(size=(7, 3)))
        assert out.shape == (7, 2)

    def test_shape_error_names_layer(self):
        rng = np.random.default_rng(0)
        layers = [DenseLayer.init(3, 4, "relu", rng), DenseLayer.init(5, 1, "identity", rng)]
        with pytest.raises(ShapeError, match="layer 1"):
            forward(layers, np.zeros((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity_without_bias(self, seed, alpha, beta):
        rng = np.random.default_rng(seed)
        layers = random_net(rng, [3, 4, 2], "identity")
        x, y = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        lhs = forward(layers, alpha * x + beta * y)
        rhs = alpha * forward(layers, x) + beta * forward(layers, y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_glorot_bounds(self):
        layer = DenseLayer.init(10, 6, "relu", np.random.default_rng(1))
        assert np.abs(layer.weights).max() <= np.sqrt(6 / 16)
        assert np.all(layer.bias == 0)


class TestBackward:
    def test_identity_layer_grads(self):
        layer = DenseLayer(np.eye(2), np.zeros(2), "identity")
        x = np.array([[1.0, 2.0], [3.0, -1.0]])
        tr = Trace()
        forward([layer], x, tr)
        tape, dx = backward([layer], tr, np.ones((2, 2)))
        np.testing.assert_array_equal(tape[0].weights, np.ones((2, 2)).T @ x)
        np.testing.assert_array_equal(tape[0].bias, [2.0, 2.0])
        np.testing.assert_array_equal(dx, np.ones((2, 2)))

    def test_relu_gate_blocks_negative_unit(self):
        layer = DenseLayer(np.eye(2), np.zeros(2), "relu")
        tr = Trace()
        forward([layer], [[-1.0, 2.0]], tr)
        tape, dx = backward([layer], tr, np.ones((1, 2)))
        assert dx[0, 0] == 0.0 and dx[0, 1] == 1.0
        assert tape[0].bias[0] == 0.0

    def test_missing_trace(self):
        layer = DenseLayer(np.eye(2), np.zeros(2), "relu")
        with pytest.raises(UsageError):
            backward([layer], None, np.ones((1, 2)))
        with pytest.raises(UsageError):
            backward([layer], Trace(), np.ones((1, 2)))

    @pytest.mark.parametrize("activation", ["identity", "relu", "tanh"])
    @pytest.mark.parametrize("sizes", [[3, 2], [3, 5, 2], [2, 8, 4, 3]])
    def test_finite_differences(self, activation, sizes):
        rng = np.random.default_rng(len(sizes) * 10 + len(activation))
        layers = random_net(rng, sizes, activation)
        for l in layers:
            l.bias[:] = rng.normal(scale=0.5, size=l.bias.shape)
        x = rng.normal(size=(6, sizes[0]))
        direction = rng.normal(size=(6, sizes[-1]))

        def loss():
            return float(np.sum(forward(layers, x) * direction))

        tr = Trace()
        forward(layers, x, tr)
        tape, dx = backward(layers, tr, direction)
        analytic = [a for g in tape for a in g.arrays()]
        params = [p for l in layers for p in l.params()]
        numeric = central_difference(loss, params)
        assert max_relative_error(analytic, numeric) < 1e-4

        x_num = central_difference(loss, [x])
        assert max_relative_error([dx], x_num) < 1e-4


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = np.array([0.5])
        st_ = AdamState(lr=1e-3)
        adam_step([p], [np.array([1.0])], st_)
        # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        assert p[0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)
        assert st_.t == 1

    def test_zero_gradient(self):
        p = np.array([0.5, -2.0])
        st_ = AdamState()
        adam_step([p], [np.zeros(2)], st_)
        np.testing.assert_array_equal(p, [0.5, -2.0])
        assert st_.t == 1

    def test_two_identical_steps_hand_simulated(self):
        p = np.array([1.0])
        s = AdamState(lr=0.01)
        adam_step([p], [np.array([2.0])], s)
        first = 1.0 - p[0]
        adam_step([p], [np.array([2.0])], s)
        second = (1.0 - first) - p[0]
        # identical gradients keep the bias-corrected moments at g and g^2
        m2 = (0.9 * 0.1 * 2 + 0.1 * 2) / (1 - 0.9**2)
        v2 = (0.999 * 0.001 * 4 + 0.001 * 4) / (1 - 0.999**2)
        assert second == pytest.approx(0.01 * m2 / (np.sqrt(v2) + 1e-8), rel=1e-12)
        assert first > 0 and second > 0

    def test_non_finite_gradient(self):
        s = AdamState()
        adam_step([np.zeros(1)], [np.ones(1)], s)
        with pytest.raises(TrainingError) as exc:
            adam_step([np.zeros(1)], [np.array([np.nan])], s)
        assert exc.value.step == 2

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState())

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(5)
            layers = random_net(rng, [3, 4, 1], "relu")
            state = AdamState()
            x = rng.normal(size=(8, 3))
            for _ in range(20):
                tr = Trace()
                out = forward(layers, x, tr)
                tape, _ = backward(layers, tr, out / 8)
                adam_step([p for l in layers for p in l.params()], [a for g in tape for a in g.arrays()], state)
            return [p.copy() for l in layers for p in l.params()]
        for a, b in zip(run(), run()):
            assert a.tobytes() == b.tobytes()
