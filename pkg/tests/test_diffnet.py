"""Network forward/backward semantics, checkpoint IO, pretraining."""

import copy

import numpy as np
import pytest

from conftest import (
    fd_param_gradient,
    joint_rel_err,
    make_random_model,
    min_abs_preactivation,
)
from stamp_tta import datagen, diffnet, losses
from stamp_tta.diffnet import ForwardMode, Model
from stamp_tta.errors import ConfigError, NumericalError


def snapshot_arrays(model):
    out = []
    for layer in model.layers:
        out.append(layer.weight.copy())
        out.append(layer.bias.copy())
        if layer.bn is not None:
            out += [
                layer.bn.gamma.copy(),
                layer.bn.beta.copy(),
                layer.bn.running_mean.copy(),
                layer.bn.running_var.copy(),
            ]
    return out


def arrays_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


class TestInit:
    def test_architecture(self):
        m = diffnet.init_model(2, (32, 32), 4, seed=0)
        assert [l.weight.shape for l in m.layers] == [(2, 32), (32, 32), (32, 4)]
        assert m.layers[-1].bn is None
        assert all(l.bn is not None for l in m.layers[:-1])
        assert all(l.weight.dtype == np.float64 for l in m.layers)

    def test_determinism(self):
        a = diffnet.init_model(3, (8,), 5, seed=11)
        b = diffnet.init_model(3, (8,), 5, seed=11)
        assert arrays_equal(snapshot_arrays(a), snapshot_arrays(b))

    def test_validation(self):
        with pytest.raises(ConfigError):
            diffnet.init_model(2, (), 4, seed=0)
        with pytest.raises(ConfigError):
            diffnet.init_model(2, (8, 0), 4, seed=0)
        with pytest.raises(ConfigError):
            diffnet.init_model(2, (8,), 1, seed=0)
        with pytest.raises(ConfigError):
            diffnet.init_model(0, (8,), 4, seed=0)


class TestForward:
    def test_rows_sum_to_one(self):
        m = make_random_model(0)
        x = np.random.default_rng(0).normal(size=(9, 3))
        for mode in ForwardMode:
            p = diffnet.forward(m, x, mode)
            assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(p >= 0)

    def test_finite_on_zero_input(self):
        m = make_random_model(1)
        p = diffnet.forward(m, np.zeros((2, 3)), ForwardMode.SOURCE_STATS)
        assert np.all(np.isfinite(p))

    def test_source_stats_is_pure(self):
        m = make_random_model(2)
        x = np.random.default_rng(1).normal(size=(5, 3))
        before = snapshot_arrays(m)
        p1 = diffnet.forward(m, x, ForwardMode.SOURCE_STATS)
        p2 = diffnet.forward(m, x, ForwardMode.SOURCE_STATS)
        assert np.array_equal(p1, p2)
        assert arrays_equal(before, snapshot_arrays(m))

    def test_source_stats_row_independence(self):
        # equality is to float accuracy, not bitwise: the matmul kernel may
        # reassociate sums differently for different batch shapes
        m = make_random_model(3)
        x = np.random.default_rng(2).normal(size=(6, 3))
        full = diffnet.forward(m, x, ForwardMode.SOURCE_STATS)
        rows = np.concatenate(
            [diffnet.forward(m, x[i : i + 1], ForwardMode.SOURCE_STATS) for i in range(6)]
        )
        assert np.allclose(full, rows, rtol=1e-12, atol=1e-15)

    def test_batch_stats_requires_two_rows(self):
        m = make_random_model(4)
        with pytest.raises(ValueError):
            diffnet.forward(m, np.zeros((1, 3)), ForwardMode.BATCH_STATS)

    def test_input_dim_mismatch(self):
        m = make_random_model(5)
        with pytest.raises(ValueError):
            diffnet.forward(m, np.zeros((2, 4)), ForwardMode.SOURCE_STATS)

    def test_update_stats_only_in_batch_mode(self):
        m = make_random_model(6)
        with pytest.raises(ValueError):
            diffnet.forward(m, np.zeros((2, 3)), ForwardMode.SOURCE_STATS, update_stats=True)

    def test_batch_stats_pure_without_flag(self):
        m = make_random_model(7)
        x = np.random.default_rng(3).normal(size=(5, 3))
        before = snapshot_arrays(m)
        diffnet.forward(m, x, ForwardMode.BATCH_STATS)
        assert arrays_equal(before, snapshot_arrays(m))

    def test_running_update_uses_unbiased_variance(self):
        m = diffnet.init_model(2, (3,), 2, seed=0)
        bn = m.layers[0].bn
        rm0, rv0 = bn.running_mean.copy(), bn.running_var.copy()
        x = np.random.default_rng(4).normal(size=(8, 2))
        diffnet.forward(m, x, ForwardMode.BATCH_STATS, update_stats=True)
        z = x @ m.layers[0].weight + m.layers[0].bias
        expect_mean = (1 - bn.momentum) * rm0 + bn.momentum * z.mean(axis=0)
        expect_var = (1 - bn.momentum) * rv0 + bn.momentum * z.var(axis=0, ddof=1)
        assert np.allclose(bn.running_mean, expect_mean, atol=1e-12)
        assert np.allclose(bn.running_var, expect_var, atol=1e-12)

    def test_batch_normalization_uses_biased_variance(self):
        m = diffnet.init_model(2, (3,), 2, seed=1)
        # isolate the BN output by reading the cache
        x = np.random.default_rng(5).normal(size=(6, 2))
        _, cache = diffnet.forward_cached(m, x, ForwardMode.BATCH_STATS)
        lc = cache.layers[0]
        z = x @ m.layers[0].weight + m.layers[0].bias
        expect = (z - z.mean(axis=0)) / np.sqrt(z.var(axis=0) + m.layers[0].bn.eps)
        assert np.allclose(lc.x_hat, expect, atol=1e-12)

    def test_source_stats_normalizes_with_running_buffers(self):
        m = make_random_model(8)
        x = np.random.default_rng(6).normal(size=(4, 3))
        _, cache = diffnet.forward_cached(m, x, ForwardMode.SOURCE_STATS)
        lc = cache.layers[0]
        bn = m.layers[0].bn
        z = x @ m.layers[0].weight + m.layers[0].bias
        expect = (z - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
        assert np.allclose(lc.x_hat, expect, atol=1e-12)


class TestParams:
    def test_adaptable_is_bn_only_and_ordered(self):
        m = diffnet.init_model(2, (4, 4), 3, seed=0)
        assert diffnet.adaptable_params(m) == [
            "layers.0.bn.gamma",
            "layers.0.bn.beta",
            "layers.1.bn.gamma",
            "layers.1.bn.beta",
        ]

    def test_bn_free_model_rejected(self):
        m = diffnet.init_model(2, (4,), 3, seed=0)
        m.layers[0].bn = None
        with pytest.raises(ConfigError):
            diffnet.adaptable_params(m)

    def test_get_set_round_trip(self):
        m = make_random_model(9)
        names = diffnet.adaptable_params(m)
        params = diffnet.get_params(m, names)
        params["layers.0.bn.gamma"] = params["layers.0.bn.gamma"] + 1.0
        diffnet.set_params(m, params)
        assert np.array_equal(
            diffnet.get_params(m, names)["layers.0.bn.gamma"],
            params["layers.0.bn.gamma"],
        )

    def test_set_params_shape_check(self):
        m = make_random_model(10)
        with pytest.raises(ValueError):
            diffnet.set_params(m, {"layers.0.bn.gamma": np.zeros(3)})

    def test_unknown_parameter_name(self):
        m = make_random_model(11)
        with pytest.raises(KeyError):
            diffnet.get_params(m, ["layers.0.bn.delta"])


class TestBackward:
    def _check_fd(self, seed, mode, loss_name):
        rng = np.random.default_rng(seed)
        for attempt in range(50):
            m = make_random_model(seed * 100 + attempt)
            x = rng.normal(size=(5, 3))
            if min_abs_preactivation(m, x, mode) > 1e-4:
                break
        else:  # pragma: no cover
            pytest.fail("no kink-free instance found")
        if loss_name == "xent":
            y = rng.integers(0, 4, size=5)
            loss_fn = lambda z: losses.cross_entropy_loss(z, y)
        else:
            loss_fn = losses.make_entropy_objective(loss_name)
        _, g = diffnet.grad(m, x, mode, loss_fn, wrt="all")
        fd = fd_param_gradient(m, list(g), x, mode, loss_fn)
        assert joint_rel_err(g, fd) < 1e-6

    @pytest.mark.parametrize("mode", list(ForwardMode))
    @pytest.mark.parametrize("loss_name", ["plain", "self", "xent"])
    def test_full_parameter_fd(self, mode, loss_name):
        self._check_fd(13, mode, loss_name)

    def test_adaptable_subset_matches_full(self):
        m = make_random_model(14)
        x = np.random.default_rng(14).normal(size=(6, 3))
        loss_fn = losses.make_entropy_objective("self")
        _, g_all = diffnet.grad(m, x, ForwardMode.BATCH_STATS, loss_fn, wrt="all")
        _, g_adapt = diffnet.grad(m, x, ForwardMode.BATCH_STATS, loss_fn, wrt="adaptable")
        assert set(g_adapt) == set(diffnet.adaptable_params(m))
        for name in g_adapt:
            assert np.array_equal(g_adapt[name], g_all[name])

    def test_uniform_output_model_has_zero_gradient(self):
        # zeroed head: logits are identically 0, entropy is flat in every
        # parameter direction, so all gradients vanish by symmetry
        m = make_random_model(15)
        m.layers[-1].weight = np.zeros_like(m.layers[-1].weight)
        m.layers[-1].bias = np.zeros_like(m.layers[-1].bias)
        x = np.random.default_rng(15).normal(size=(4, 3))
        loss_fn = losses.make_entropy_objective("plain")
        _, g = diffnet.grad(m, x, ForwardMode.BATCH_STATS, loss_fn, wrt="all")
        for name, arr in g.items():
            assert np.allclose(arr, 0.0, atol=1e-12), name

    def test_hidden_bias_gradient_vanishes_under_batch_stats(self):
        # batch normalization removes the batch mean, so a bias shift before
        # it cannot move the loss
        m = make_random_model(16)
        x = np.random.default_rng(16).normal(size=(5, 3))
        loss_fn = losses.make_entropy_objective("plain")
        _, g = diffnet.grad(m, x, ForwardMode.BATCH_STATS, loss_fn, wrt="all")
        assert np.allclose(g["layers.0.bias"], 0.0, atol=1e-12)
        assert np.allclose(g["layers.1.bias"], 0.0, atol=1e-12)
        assert not np.allclose(g["layers.2.bias"], 0.0, atol=1e-12)

    def test_non_finite_loss_raises(self):
        m = make_random_model(17)
        x = np.random.default_rng(17).normal(size=(3, 3))

        def bad_loss(logits):
            return float("nan"), np.zeros_like(logits)

        with pytest.raises(NumericalError):
            diffnet.grad(m, x, ForwardMode.SOURCE_STATS, bad_loss)

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_non_finite_gradient_names_parameter(self):
        m = make_random_model(18)
        x = np.random.default_rng(18).normal(size=(3, 3))

        def bad_loss(logits):
            return 0.0, np.full_like(logits, np.inf)

        with pytest.raises(NumericalError) as err:
            diffnet.grad(m, x, ForwardMode.SOURCE_STATS, bad_loss)
        assert "layers." in str(err.value)


class TestSnapshotAndCheckpoint:
    def test_snapshot_is_independent(self):
        m = make_random_model(19)
        snap = diffnet.snapshot_source(m)
        m.layers[0].bn.gamma += 5.0
        assert not np.array_equal(snap.layers[0].bn.gamma, m.layers[0].bn.gamma)
        snap2 = diffnet.snapshot_source(snap)
        assert arrays_equal(snapshot_arrays(snap), snapshot_arrays(snap2))

    def test_save_load_round_trip_bit_exact(self, tmp_path):
        m = make_random_model(20)
        diffnet.forward(
            m, np.random.default_rng(1).normal(size=(8, 3)),
            ForwardMode.BATCH_STATS, update_stats=True,
        )
        path = tmp_path / "model.npz"
        diffnet.save_model(m, path)
        loaded = diffnet.load_model(path)
        assert arrays_equal(snapshot_arrays(m), snapshot_arrays(loaded))
        assert loaded.input_dim == m.input_dim
        assert loaded.num_classes == m.num_classes
        x = np.random.default_rng(2).normal(size=(4, 3))
        assert np.array_equal(
            diffnet.forward(m, x, ForwardMode.SOURCE_STATS),
            diffnet.forward(loaded, x, ForwardMode.SOURCE_STATS),
        )

    def test_load_rejects_file_without_metadata(self, tmp_path):
        path = tmp_path / "bad.npz"
        with open(path, "wb") as fh:
            np.savez(fh, junk=np.zeros(3))
        with pytest.raises(ConfigError):
            diffnet.load_model(path)


class TestPretrain:
    def _source(self, n=600, seed=0):
        return datagen.gen_source(3, 2, n, seed)

    def test_reaches_high_accuracy_on_blobs(self):
        x, y = self._source()
        m = diffnet.init_model(2, (16, 16), 3, seed=0)
        diffnet.pretrain(m, x[:450], y[:450], epochs=30, lr=0.05, seed=0)
        assert diffnet.evaluate_accuracy(m, x[450:], y[450:]) >= 0.95

    def test_deterministic(self):
        x, y = self._source()
        runs = []
        for _ in range(2):
            m = diffnet.init_model(2, (8,), 3, seed=3)
            diffnet.pretrain(m, x, y, epochs=3, lr=0.05, seed=3)
            runs.append(snapshot_arrays(m))
        assert arrays_equal(*runs)

    def test_zero_epochs_is_identity(self):
        x, y = self._source(n=60)
        m = diffnet.init_model(2, (8,), 3, seed=4)
        before = snapshot_arrays(m)
        diffnet.pretrain(m, x, y, epochs=0, lr=0.05, seed=4)
        assert arrays_equal(before, snapshot_arrays(m))

    def test_label_out_of_range(self):
        x, y = self._source(n=60)
        m = diffnet.init_model(2, (8,), 3, seed=5)
        with pytest.raises(ValueError):
            diffnet.pretrain(m, x, np.full_like(y, 7), epochs=1, lr=0.05, seed=5)
