import numpy as np
import pytest

from pedflow.errors import CheckpointError, NonFiniteLoss
from pedflow.net import (
    ModelConfig,
    ModelParams,
    TrainConfig,
    attention,
    evaluate,
    forward,
    loss_and_grads,
    predict,
    recurrent_cell,
    softmax,
    train,
)
from pedflow.net.gradcheck import check_gradients, random_batch, tiny_config
from pedflow.net.model import embed_step, predict_embedded
from pedflow.net.params import STREAMS, param_specs
from pedflow.net.training import ReduceLROnPlateau, split_indices


class TestLayers:
    def test_recurrent_cell_matches_direct_math(self, rng):
        din, h, b = 3, 4, 2
        wx = rng.normal(0, 0.5, (din, 4 * h))
        wh = rng.normal(0, 0.5, (h, 4 * h))
        bias = rng.normal(0, 0.5, 4 * h)
        x = rng.normal(0, 1, (b, din))
        h0 = rng.normal(0, 1, (b, h))
        c0 = rng.normal(0, 1, (b, h))
        h1, c1 = recurrent_cell(x, h0, c0, wx, wh, bias)
        pre = x @ wx + h0 @ wh + bias
        sig = lambda v: 1 / (1 + np.exp(-v))
        i, f, g, o = (pre[:, :h], pre[:, h:2 * h], pre[:, 2 * h:3 * h], pre[:, 3 * h:])
        c_ref = sig(f) * c0 + sig(i) * np.tanh(g)
        np.testing.assert_allclose(c1, c_ref, rtol=1e-12)
        np.testing.assert_allclose(h1, sig(o) * np.tanh(c_ref), rtol=1e-12)

    def test_softmax_normalizes_and_shifts(self, rng):
        x = rng.normal(0, 5, (4, 7))
        s = softmax(x)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_allclose(softmax(x + 100.0), s, rtol=1e-10)

    def test_attention_weighted_mean(self):
        keys = np.array([[1.0, 0.0], [0.0, 1.0]])
        values = np.array([[10.0, 0.0], [0.0, 10.0]])
        q = np.array([5.0, 5.0])
        ctx = attention(q, keys, values)
        np.testing.assert_allclose(ctx, [5.0, 5.0], atol=1e-9)

    def test_attention_sharpens_toward_best_key(self):
        keys = np.array([[4.0, 0.0], [0.0, 4.0]])
        values = np.array([[1.0], [2.0]])
        ctx, w = attention(np.array([4.0, 0.0]), keys, values, return_weights=True)
        assert w[0] > 0.99 and ctx[0] < 1.01

    def test_masked_weights_exactly_zero(self):
        keys = np.tile(np.array([[1.0, 1.0]]), (3, 1))
        values = np.array([[1.0], [100.0], [3.0]])
        ctx, w = attention(np.array([1.0, 1.0]), keys, values,
                           mask=np.array([True, False, True]),
                           return_weights=True)
        assert w[1] == 0.0
        np.testing.assert_allclose(ctx, [2.0], atol=1e-9)

    def test_all_masked_raises(self):
        with pytest.raises(ValueError):
            attention(np.ones(2), np.ones((2, 2)), np.ones((2, 1)),
                      mask=np.array([False, False]))


class TestParams:
    def test_init_deterministic(self):
        cfg = tiny_config()
        a = ModelParams.init(cfg, 11)
        b = ModelParams.init(cfg, 11)
        for k in a.tensors:
            np.testing.assert_array_equal(a[k], b[k])

    def test_different_seeds_differ(self):
        cfg = tiny_config()
        a = ModelParams.init(cfg, 1)
        b = ModelParams.init(cfg, 2)
        assert any(not np.array_equal(a[k], b[k]) for k in a.tensors)

    def test_forget_gate_bias_starts_open(self):
        p = ModelParams.init(tiny_config(), 0)
        h = tiny_config().enc_hidden
        assert np.all(p["enc_rel_b"][h:2 * h] == 1.0)
        assert np.all(p["enc_rel_b"][:h] == 0.0)

    def test_save_load_bitwise(self, tmp_path):
        p = ModelParams.init(tiny_config(), 5)
        path = tmp_path / "model.npz"
        p.save(path)
        q = ModelParams.load(path)
        assert q.config == p.config
        for k in p.tensors:
            np.testing.assert_array_equal(p[k], q[k])

    def test_version_mismatch_rejected(self, tmp_path, monkeypatch):
        p = ModelParams.init(tiny_config(), 5)
        path = tmp_path / "model.npz"
        import pedflow.net.params as mod
        monkeypatch.setattr(mod, "CHECKPOINT_VERSION", 99)
        p.save(path)
        monkeypatch.undo()
        with pytest.raises(CheckpointError, match="version"):
            ModelParams.load(path)

    def test_wrong_shape_rejected(self):
        cfg = tiny_config()
        tensors = {n: np.zeros(s) for n, s, _ in param_specs(cfg)}
        tensors["fuse_b"] = np.zeros(3)
        with pytest.raises(CheckpointError, match="shape"):
            ModelParams(cfg, tensors)

    def test_missing_tensor_rejected(self):
        cfg = tiny_config()
        tensors = {n: np.zeros(s) for n, s, _ in param_specs(cfg)}
        tensors.pop("dec_Wx")
        with pytest.raises(CheckpointError, match="mismatch"):
            ModelParams(cfg, tensors)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, a=np.zeros(3))
        with pytest.raises(CheckpointError):
            ModelParams.load(tmp_path / "junk.npz")


class TestModel:
    def setup_method(self):
        self.cfg = tiny_config()
        self.params = ModelParams.init(self.cfg, 7)
        self.batch = random_batch(self.cfg, 3, seed=2)

    def test_output_shapes(self):
        pred = predict(self.params, self.batch)
        assert pred.delta_p.shape == (3, 2)
        assert pred.edge_logits.shape == (3, self.cfg.n_edges)
        assert pred.attn.shape == (3, self.cfg.dec_steps)
        np.testing.assert_allclose(pred.edge_probs.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_allclose(pred.attn.sum(axis=1), 1.0, rtol=1e-12)

    def test_forward_deterministic_bitwise(self):
        a = predict(self.params, self.batch)
        b = predict(self.params, self.batch)
        np.testing.assert_array_equal(a.delta_p, b.delta_p)
        np.testing.assert_array_equal(a.edge_logits, b.edge_logits)

    def test_embedded_path_matches_training_path(self):
        bsz, n = self.batch["goal"].shape[0], self.cfg.window
        streams = {s: np.empty((bsz, n, self.cfg.embed_dim)) for s in STREAMS}
        streams["sig"] = np.empty((bsz, n, 1))
        for step in range(n):
            emb = embed_step(self.params,
                             self.batch["rel"][:, step],
                             self.batch["occ"][:, step],
                             self.batch["bird"][:, step],
                             self.batch["edge"][:, step],
                             self.batch["sig"][:, step])
            for s in STREAMS:
                streams[s][:, step] = emb[s]
        a = predict_embedded(self.params, streams, self.batch["hist"],
                             self.batch["goal"])
        b = predict(self.params, self.batch)
        np.testing.assert_allclose(a.delta_p, b.delta_p, atol=1e-12)
        np.testing.assert_allclose(a.edge_logits, b.edge_logits, atol=1e-12)

    def test_goal_changes_output(self):
        pred_a = predict(self.params, self.batch)
        other = dict(self.batch)
        other["goal"] = (self.batch["goal"] + 1) % self.cfg.n_nodes
        pred_b = predict(self.params, other)
        assert np.abs(pred_a.delta_p - pred_b.delta_p).max() > 1e-8

    def test_missing_key_raises(self):
        bad = dict(self.batch)
        bad.pop("occ")
        with pytest.raises(ValueError, match="occ"):
            predict(self.params, bad)

    def test_gradcheck_spot(self):
        rep = check_gradients(self.params, self.batch,
                              tensors=["emb_edge_W", "enc_glob_Wx", "attn_Wv",
                                       "head_edge_b"])
        assert rep.passed, rep.summary()


class _ToyData:
    """Learnable synthetic set: displacement depends on the goal, the
    next edge equals the last window edge."""

    def __init__(self, cfg, n, seed):
        gen = np.random.default_rng(seed)
        self.arrays = random_batch(cfg, n, seed=seed)
        goals = self.arrays["goal"]
        angles = 2 * np.pi * goals / cfg.n_nodes
        self.arrays["target_dp"] = 0.25 * np.column_stack(
            [np.cos(angles), np.sin(angles)]) + gen.normal(0, 0.01, (n, 2))
        self.arrays["target_edge"] = self.arrays["edge"][:, -1].copy()
        self.n = n

    def batch(self, idx):
        return {k: v[idx] for k, v in self.arrays.items()}


class TestTraining:
    def test_loss_decreases_on_toy_problem(self):
        cfg = tiny_config()
        data = _ToyData(cfg, 160, seed=0)
        res = train(data, cfg, TrainConfig(epochs=25, batch_size=32, lr=3e-3, seed=1))
        assert res.val_loss[-1] < res.val_loss[0] * 0.5
        ev = evaluate(res.params, data, res.val_indices)
        assert ev["edge_acc"] > 0.7

    def test_training_bitwise_reproducible(self):
        cfg = tiny_config()
        data = _ToyData(cfg, 60, seed=3)
        tc = TrainConfig(epochs=3, batch_size=16, lr=1e-3, seed=9)
        a = train(data, cfg, tc)
        b = train(data, cfg, tc)
        assert a.train_loss == b.train_loss
        assert a.val_loss == b.val_loss
        for k in a.params.tensors:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_best_epoch_snapshot_returned(self):
        cfg = tiny_config()
        data = _ToyData(cfg, 80, seed=4)
        res = train(data, cfg, TrainConfig(epochs=8, batch_size=16, lr=2e-3, seed=2))
        assert res.best_val == min(res.val_loss)
        assert res.val_loss[res.best_epoch] == res.best_val

    def test_nan_input_raises_nonfinite(self):
        cfg = tiny_config()
        data = _ToyData(cfg, 40, seed=5)
        data.arrays["rel"][0, 0, 0] = np.nan
        with pytest.raises(NonFiniteLoss):
            train(data, cfg, TrainConfig(epochs=1, batch_size=40, seed=0))

    def test_split_disjoint_and_seeded(self):
        tr, va = split_indices(100, 0.1, np.random.default_rng(4))
        assert len(va) == 10 and len(tr) == 90
        assert not set(tr) & set(va)
        tr2, va2 = split_indices(100, 0.1, np.random.default_rng(4))
        np.testing.assert_array_equal(va, va2)

    def test_plateau_schedule(self):
        sched = ReduceLROnPlateau(lr=1.0, factor=0.5, patience=2,
                                  threshold=1e-4, min_lr=0.01)
        for loss in (1.0, 0.5, 0.5, 0.5, 0.5):
            lr = sched.step(loss)
        assert lr == 0.5  # three bad epochs after the improvement
        for loss in (0.5, 0.5, 0.5):
            lr = sched.step(loss)
        assert lr == 0.25
