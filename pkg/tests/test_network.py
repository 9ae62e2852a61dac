import numpy as np
import pytest

from bcpredict.nn.network import (
    DivergenceError,
    NetworkConfig,
    NetworkError,
    Params,
    forward,
    init_params,
    l2_penalty,
    loss_and_gradients,
    make_dropout_masks,
    param_count,
    param_shapes,
)
from bcpredict.rng import Stream

from conftest import gradient_check


def batch(config, n=3, steps=4, seed=0):
    rng = np.random.default_rng(seed)
    shape = (n, config.input_dim) if config.kind == "ff" else (n, steps, config.input_dim)
    return rng.normal(size=shape), rng.integers(0, 2, size=n)


class TestConfig:
    @pytest.mark.parametrize(
        "change",
        [{"kind": "cnn"}, {"hidden_sizes": ()}, {"hidden_sizes": (4, 0)}, {"activation": "gelu"}, {"dropout": 0.6},
         {"l2": -1.0}, {"init": "he"}, {"optimizer": "rmsprop"}, {"input_dim": 0}],
    )
    def test_invalid(self, change):
        with pytest.raises(NetworkError):
            NetworkConfig(**change)

    def test_dict(self):
        d = NetworkConfig(kind="ff", hidden_sizes=[3]).to_dict()
        assert d["hidden_sizes"] == [3] and d["kind"] == "ff"


class TestParamCount:
    @pytest.mark.parametrize(
        "kind,hidden,inp,expected",
        [("ff", (70, 35), 675, 49_877), ("ff", (56, 28), 675, 39_510), ("ff", (100, 50), 675, 72_752), ("lstm", (70, 35), 9, 37_312)],
    )
    def test_table_configs(self, kind, hidden, inp, expected):
        cfg = NetworkConfig(kind=kind, hidden_sizes=hidden, input_dim=inp)
        assert param_count(cfg) == expected
        assert init_params(cfg).size == expected

    def test_closed_form(self):
        for hidden in [(5,), (7, 3), (4, 4, 4)]:
            ff = NetworkConfig(kind="ff", hidden_sizes=hidden, input_dim=6)
            sizes = (6, *hidden, 2)
            assert param_count(ff) == sum(a * b + b for a, b in zip(sizes, sizes[1:]))
            lstm = NetworkConfig(kind="lstm", hidden_sizes=hidden, input_dim=6)
            ins = (6, *hidden[:-1])
            assert param_count(lstm) == sum(4 * (h * (i + h) + h) for i, h in zip(ins, hidden)) + hidden[-1] * 2 + 2

    def test_layout_order(self):
        names = [n for n, _ in param_shapes(NetworkConfig(kind="lstm", hidden_sizes=(3, 2), input_dim=4))]
        assert names == ["Wx1", "Wh1", "b1", "Wx2", "Wh2", "b2", "Wout", "bout"]


class TestInit:
    def test_zero(self):
        p = init_params(NetworkConfig(init="zero", input_dim=3, hidden_sizes=(4,)))
        assert not p.flat().any()

    def test_glorot_bounds_and_forget_bias(self):
        cfg = NetworkConfig(kind="lstm", hidden_sizes=(6, 5), input_dim=3)
        p = init_params(cfg)
        for name, shape in param_shapes(cfg):
            a = p[name]
            assert a.shape == shape
            if name.startswith("W"):
                bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                assert np.abs(a).max() <= bound and np.abs(a).max() > 0.5 * bound
        np.testing.assert_array_equal(p["b1"], np.r_[np.zeros(6), np.ones(6), np.zeros(12)])
        np.testing.assert_array_equal(p["bout"], 0.0)

    def test_seeded(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(5,), input_dim=3)
        np.testing.assert_array_equal(init_params(cfg, 4).flat(), init_params(cfg, 4).flat())
        assert not np.array_equal(init_params(cfg, 4).flat(), init_params(cfg, 5).flat())

    def test_flat_round_trip(self):
        cfg = NetworkConfig(kind="lstm", hidden_sizes=(3,), input_dim=2)
        p = init_params(cfg)
        np.testing.assert_array_equal(Params.from_flat(cfg, p.flat()).flat(), p.flat())
        with pytest.raises(NetworkError):
            Params.from_flat(cfg, p.flat()[:-1])


class TestForward:
    @pytest.mark.parametrize("kind", ["ff", "lstm"])
    def test_zero_params_uniform(self, kind):
        cfg = NetworkConfig(kind=kind, hidden_sizes=(4, 3), input_dim=5, init="zero")
        X, y = batch(cfg)
        np.testing.assert_array_equal(forward(init_params(cfg), cfg, X), 0.5)
        loss, _ = loss_and_gradients(init_params(cfg), cfg, X, y)
        assert loss == pytest.approx(np.log(2.0), abs=1e-15)

    @pytest.mark.parametrize("kind", ["ff", "lstm"])
    def test_normalized(self, kind):
        cfg = NetworkConfig(kind=kind, hidden_sizes=(6,), input_dim=4)
        p = init_params(cfg)
        p.arrays = [a * 3 + 0.1 for a in p.arrays]
        X, _ = batch(cfg, n=50)
        probs = forward(p, cfg, X)
        assert (probs > 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_hand_set_single_unit(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(1,), input_dim=2)
        a, b, c, d, e, f, g = 0.7, -1.3, 0.2, 2.0, -0.5, 0.1, 0.4
        p = Params(["W1", "b1", "Wout", "bout"], [np.array([[a], [b]]), np.array([c]), np.array([[d, e]]), np.array([f, g])])
        x = np.array([0.9, 0.35])
        h = np.tanh(a * x[0] + b * x[1] + c)
        expected = 1.0 / (1.0 + np.exp((h * e + g) - (h * d + f)))
        probs = forward(p, cfg, x)
        assert probs[0] == pytest.approx(expected, abs=1e-12)
        assert probs[1] == pytest.approx(1 - expected, abs=1e-12)

    def test_relu(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(1,), input_dim=1, activation="relu")
        p = Params(["W1", "b1", "Wout", "bout"], [np.array([[1.0]]), np.array([0.0]), np.array([[1.0, 0.0]]), np.zeros(2)])
        assert forward(p, cfg, np.array([-3.0]))[0] == pytest.approx(0.5)
        assert forward(p, cfg, np.array([2.0]))[0] == pytest.approx(1 / (1 + np.exp(-2.0)))

    def test_ff_flattening_row_major(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(3,), input_dim=6)
        p = init_params(cfg)
        win = np.arange(6.0).reshape(3, 2) / 6
        np.testing.assert_array_equal(forward(p, cfg, win), forward(p, cfg, win.ravel()))

    def test_lstm_last_step_depends_on_history(self):
        cfg = NetworkConfig(kind="lstm", hidden_sizes=(5,), input_dim=2)
        p = init_params(cfg)
        X, _ = batch(cfg, n=1, steps=6)
        Y = X.copy()
        Y[0, 0] += 1.0
        assert not np.allclose(forward(p, cfg, X), forward(p, cfg, Y))

    def test_shape_mismatch(self):
        with pytest.raises(NetworkError):
            forward(init_params(NetworkConfig(kind="ff", hidden_sizes=(2,), input_dim=3)), NetworkConfig(kind="ff", hidden_sizes=(2,), input_dim=3), np.zeros((2, 4)))
        cfg = NetworkConfig(kind="lstm", hidden_sizes=(2,), input_dim=3)
        with pytest.raises(NetworkError):
            forward(init_params(cfg), cfg, np.zeros((2, 5, 4)))


class TestGradients:
    @pytest.mark.parametrize("kind", ["ff", "lstm"])
    @pytest.mark.parametrize("l2", [0.0, 1e-4, 0.05])
    def test_finite_differences(self, kind, l2):
        cfg = NetworkConfig(kind=kind, hidden_sizes=(5, 4), input_dim=3, l2=l2)
        X, y = batch(cfg, steps=5)
        assert gradient_check(cfg, init_params(cfg), X, y) < 1e-4

    @pytest.mark.parametrize("kind", ["ff", "lstm"])
    def test_finite_differences_with_dropout(self, kind):
        cfg = NetworkConfig(kind=kind, hidden_sizes=(6, 4), input_dim=3, dropout=0.3, activation="tanh")
        X, y = batch(cfg, steps=4, seed=2)
        masks = make_dropout_masks(cfg, 3, Stream(9, "masks"))
        assert any((m == 0).any() for m in masks)
        assert gradient_check(cfg, init_params(cfg), X, y, masks) < 1e-4

    def test_relu_finite_differences(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(6,), input_dim=4, activation="relu")
        X, y = batch(cfg, seed=3)
        assert gradient_check(cfg, init_params(cfg), X, y) < 1e-4

    @pytest.mark.parametrize("kind", ["ff", "lstm"])
    def test_duplicated_example(self, kind):
        cfg = NetworkConfig(kind=kind, hidden_sizes=(4,), input_dim=3, l2=0.0)
        X, y = batch(cfg, n=1)
        p = init_params(cfg)
        l1, g1 = loss_and_gradients(p, cfg, X, y)
        l2_, g2 = loss_and_gradients(p, cfg, np.concatenate([X, X]), np.concatenate([y, y]))
        assert l1 == pytest.approx(l2_, rel=1e-14)
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_l2_monotone(self):
        X, y = batch(NetworkConfig(kind="ff", hidden_sizes=(3,), input_dim=3))
        p = init_params(NetworkConfig(kind="ff", hidden_sizes=(3,), input_dim=3))
        losses = [loss_and_gradients(p, NetworkConfig(kind="ff", hidden_sizes=(3,), input_dim=3, l2=l2), X, y)[0] for l2 in (0, 1e-4, 1e-3, 1e-1)]
        assert np.all(np.diff(losses) > 0)

    def test_l2_skips_biases(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(2,), input_dim=1, l2=1.0, init="zero")
        p = init_params(cfg)
        p.arrays[1][:] = 5.0
        assert l2_penalty(p, cfg) == 0.0

    def test_divergence(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(2,), input_dim=1)
        p = init_params(cfg)
        p.arrays[0][:] = np.inf
        with pytest.raises(DivergenceError):
            loss_and_gradients(p, cfg, np.ones((2, 1)), np.array([0, 1]))

    def test_empty_batch(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(2,), input_dim=1)
        with pytest.raises(NetworkError):
            loss_and_gradients(init_params(cfg), cfg, np.zeros((0, 1)), np.zeros(0, int))


class TestDropout:
    def test_inverted_scaling(self):
        cfg = NetworkConfig(kind="ff", hidden_sizes=(2000,), input_dim=1, dropout=0.25)
        m = make_dropout_masks(cfg, 50, Stream(1))[0]
        assert set(np.unique(m)) <= {0.0, 1 / 0.75}
        assert m.mean() == pytest.approx(1.0, abs=0.01)

    def test_none_without_dropout(self):
        assert make_dropout_masks(NetworkConfig(input_dim=1), 4, Stream(1)) is None
