import math

import numpy as np
import pytest

from trendgat import autodiff as ad
from trendgat import energy_graph as eg
from trendgat import model as mdl
from trendgat.errors import ConfigError, FormatError, LabelError, NumericError

from test_gnn_blocks import gat_oracle, mha_oracle


def small_config(**overrides):
    cfg = mdl.ModelConfig(tau=3, k=0.5, s=0.3, f=2, hidden=6, heads=2, layers=2,
                          lr=1e-3, wd=1e-4, epochs=10, seed=0)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def random_sample(rng, n, cfg, labels=None):
    feats = rng.standard_normal((n, cfg.input_width))
    snap = eg.snapshot(0, feats, cfg.k, cfg.tau, cfg.s)
    if labels is None:
        labels = np.zeros((n, cfg.output_width), dtype=np.int64)
        for j in range(cfg.phi):
            ups = rng.integers(0, 2, n)
            labels[np.arange(n), j * cfg.alpha + ups] = 1
    return mdl.Sample(snapshot=snap, labels=labels)


def forward_oracle(params, snapshot):
    """Straight-line numpy re-implementation, no tape machinery."""
    cfg = params.config
    h = snapshot.features @ params.w_in.data
    h = np.where(h > 0, h, h * params.prelu_in.data)
    hp = h
    for block in params.blocks:
        prop = gat_oracle(h, snapshot.adjacency, block.gat)
        if cfg.parallel_attention:
            fused = np.concatenate([hp, prop + h @ block.w_skip.data], axis=1)
            hp = mha_oracle(fused, block)
            h = prop
        else:
            h = hp = prop + h @ block.w_skip.data
    return hp @ params.w_out.data


def loss_oracle(logits, labels, alpha=2):
    n, width = labels.shape
    total = 0.0
    for row in range(n):
        for start in range(0, width, alpha):
            block = logits[row, start:start + alpha]
            z = block - block.max()
            log_probs = z - math.log(np.exp(z).sum())
            total -= float(labels[row, start:start + alpha] @ log_probs)
    return total / n


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_forward_output_shape():
    cfg = small_config()
    params = mdl.init_model(cfg)
    sample = random_sample(np.random.default_rng(0), 5, cfg)
    out = mdl.forward(params, sample.snapshot)
    assert out.data.shape == (5, 2)


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(1)
    for parallel in (True, False):
        cfg = small_config(parallel_attention=parallel)
        params = mdl.init_model(cfg)
        sample = random_sample(rng, 6, cfg)
        out = mdl.forward(params, sample.snapshot)
        np.testing.assert_allclose(out.data, forward_oracle(params, sample.snapshot),
                                   atol=1e-12)


def test_forward_is_permutation_equivariant():
    rng = np.random.default_rng(2)
    cfg = small_config()
    params = mdl.init_model(cfg)
    feats = rng.standard_normal((7, cfg.input_width))
    perm = rng.permutation(7)
    p = np.eye(7)[perm]
    base = mdl.forward(params, eg.snapshot(0, feats, cfg.k, cfg.tau, cfg.s)).data
    permuted = mdl.forward(params, eg.snapshot(0, p @ feats, cfg.k, cfg.tau, cfg.s)).data
    np.testing.assert_allclose(permuted, p @ base, atol=1e-10)


def test_forward_rejects_wrong_width():
    cfg = small_config()
    params = mdl.init_model(cfg)
    bad = eg.snapshot(0, np.random.default_rng(3).standard_normal((4, 5)), cfg.k, cfg.tau, cfg.s)
    with pytest.raises(ConfigError):
        mdl.forward(params, bad)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_confident_correct_prediction_drives_loss_to_zero():
    labels = np.array([[0, 1], [1, 0]])
    logits = ad.Value(np.array([[-40.0, 40.0], [40.0, -40.0]]))
    assert mdl.loss(logits, labels).item() < 1e-12


def test_zero_logits_give_ln2():
    labels = np.array([[0, 1], [1, 0], [0, 1]])
    logits = ad.Value(np.zeros((3, 2)))
    assert mdl.loss(logits, labels).item() == pytest.approx(math.log(2.0), abs=1e-15)


def test_loss_matches_formula_oracle():
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((4, 2))
    labels = np.zeros((4, 2), dtype=np.int64)
    labels[np.arange(4), rng.integers(0, 2, 4)] = 1
    ours = mdl.loss(ad.Value(logits), labels).item()
    assert ours == pytest.approx(loss_oracle(logits, labels), abs=1e-12)


def test_loss_multi_step_blocks():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((3, 4))  # phi=2, alpha=2
    labels = np.zeros((3, 4), dtype=np.int64)
    for j in range(2):
        labels[np.arange(3), 2 * j + rng.integers(0, 2, 3)] = 1
    ours = mdl.loss(ad.Value(logits), labels).item()
    assert ours == pytest.approx(loss_oracle(logits, labels), abs=1e-12)


def test_malformed_labels_rejected():
    logits = ad.Value(np.zeros((2, 2)))
    with pytest.raises(LabelError):
        mdl.loss(logits, np.array([[1, 1], [0, 1]]))


# ---------------------------------------------------------------------------
# adamw
# ---------------------------------------------------------------------------

class _FakeParams:
    def __init__(self, arrays):
        self.values = {name: ad.Value(a) for name, a in arrays.items()}

    def named(self):
        return sorted(self.values.items())


def test_zero_gradient_without_decay_is_noop():
    params = _FakeParams({"w": np.array([[1.0, -2.0]])})
    opt = mdl.OptimizerState()
    before = params.values["w"].data.copy()
    mdl.adamw_step(params, opt, lr=1e-3, wd=0.0)
    np.testing.assert_array_equal(params.values["w"].data, before)


def test_zero_gradient_with_decay_scales_exactly():
    params = _FakeParams({"w": np.array([[4.0, -8.0]])})
    opt = mdl.OptimizerState()
    before = params.values["w"].data.copy()
    mdl.adamw_step(params, opt, lr=1e-3, wd=0.5)
    np.testing.assert_array_equal(params.values["w"].data, before * (1.0 - 1e-3 * 0.5))


def test_constant_gradient_reaches_signed_lr_steady_state():
    params = _FakeParams({"w": np.zeros((1, 2))})
    opt = mdl.OptimizerState()
    g = np.array([[0.37, -1.9]])
    lr = 1e-3
    prev = params.values["w"].data.copy()
    for _ in range(3000):
        params.values["w"]._grad = g.copy()
        prev = params.values["w"].data.copy()
        mdl.adamw_step(params, opt, lr=lr, wd=0.0)
    delta = params.values["w"].data - prev
    np.testing.assert_allclose(delta, -lr * np.sign(g), rtol=1e-6)


def test_non_finite_gradient_names_parameter():
    params = _FakeParams({"w_bad": np.zeros((1, 1))})
    params.values["w_bad"]._grad = np.array([[np.nan]])
    with pytest.raises(NumericError, match="w_bad"):
        mdl.adamw_step(params, mdl.OptimizerState(), lr=1e-3, wd=0.0)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_single_sample_capacity():
    rng = np.random.default_rng(6)
    cfg = small_config(epochs=50)
    sample = random_sample(rng, 4, cfg)
    result = mdl.train([sample], [], cfg)
    losses = [rec["train_loss"] for rec in result.history]
    assert min(losses) < math.log(2.0)


def test_single_sample_loss_nearly_monotone():
    rng = np.random.default_rng(7)
    cfg = small_config(epochs=50)
    sample = random_sample(rng, 4, cfg)
    result = mdl.train([sample], [], cfg)
    losses = [rec["train_loss"] for rec in result.history]
    violations = sum(1 for a, b in zip(losses, losses[1:]) if b > a + 1e-12)
    assert violations <= 5


def test_training_is_deterministic():
    rng = np.random.default_rng(8)
    cfg = small_config(epochs=8)
    samples = [random_sample(rng, 4, cfg) for _ in range(3)]
    val = [random_sample(rng, 4, cfg)]
    a = mdl.train(samples, val, cfg)
    b = mdl.train(samples, val, cfg)
    assert a.history == b.history
    for (_, va), (_, vb) in zip(a.final_params.named(), b.final_params.named()):
        np.testing.assert_array_equal(va.data, vb.data)


def test_best_checkpoint_tracks_validation_accuracy():
    rng = np.random.default_rng(9)
    cfg = small_config(epochs=6)
    samples = [random_sample(rng, 4, cfg) for _ in range(2)]
    val = [random_sample(rng, 4, cfg) for _ in range(2)]
    result = mdl.train(samples, val, cfg)
    accs = [rec["val_acc"] for rec in result.history]
    assert result.best_val_acc == max(accs)
    assert result.history[result.best_epoch - 1]["val_acc"] == result.best_val_acc


# ---------------------------------------------------------------------------
# end-to-end gradient
# ---------------------------------------------------------------------------

def test_end_to_end_gradient_check():
    rng = np.random.default_rng(10)
    cfg = mdl.ModelConfig(tau=7, f=4, hidden=8, heads=2, layers=2, seed=3)
    params = mdl.init_model(cfg)
    sample = random_sample(rng, 5, cfg)

    def f():
        return mdl.loss(mdl.forward(params, sample.snapshot), sample.labels)

    values = [v for _, v in params.named()]
    report = ad.grad_check(f, values, step=1e-5, tol=1e-4)
    assert report.passed, report


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def test_predict_argmax_and_tie_rule():
    cfg = small_config(layers=2)
    params = mdl.init_model(cfg)
    # bypass the network: check the decision rule directly on logit blocks
    logits = np.array([[2.0, -1.0], [0.3, 0.3], [-4.0, 1.0]])
    classes = logits.argmax(axis=1)
    assert classes.tolist() == [0, 0, 1]  # equal logits resolve to class 0


def test_predict_shapes_and_probabilities():
    rng = np.random.default_rng(11)
    cfg = small_config()
    params = mdl.init_model(cfg)
    sample = random_sample(rng, 5, cfg)
    classes, probs = mdl.predict(params, sample.snapshot)
    assert classes.shape == (5, 1)
    assert probs.shape == (5, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert set(np.unique(classes)) <= {0, 1}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_save_load_round_trip_is_bit_identical(tmp_path):
    cfg = small_config()
    params = mdl.init_model(cfg)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    mdl.save_model(params, p1)
    mdl.save_model(mdl.load_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_is_format_error(tmp_path):
    cfg = small_config()
    params = mdl.init_model(cfg)
    path = tmp_path / "model.bin"
    mdl.save_model(params, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(FormatError, match="offset"):
        mdl.load_model(path)


def test_bad_magic_is_format_error(tmp_path):
    path = tmp_path / "model.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        mdl.load_model(path)


def test_loaded_model_reproduces_logits(tmp_path):
    rng = np.random.default_rng(12)
    cfg = small_config()
    params = mdl.init_model(cfg)
    sample = random_sample(rng, 4, cfg)
    before = mdl.forward(params, sample.snapshot).data
    mdl.save_model(params, tmp_path / "m.bin")
    loaded = mdl.load_model(tmp_path / "m.bin")
    after = mdl.forward(loaded, sample.snapshot).data
    np.testing.assert_array_equal(before, after)
