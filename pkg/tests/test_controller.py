import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdmann import rng as rngmod
from hdmann.attention import SharpeningSpec
from hdmann.controller import autodiff as ad
from hdmann.controller import (
    Adam,
    AdamConfig,
    Architecture,
    RegularizerSpec,
    Tape,
    TrainingConfig,
    aux_loss,
    forward,
    init_params,
    load_checkpoint,
    log_loss,
    occupancy_loss,
    run_training,
    save_checkpoint,
    total_loss,
    train_episode,
)
from hdmann.controller.losses import attention_probs
from hdmann.controller.network import dumps_checkpoint, loads_checkpoint
from hdmann.dataset import NO_AUGMENT, sample_episode
from hdmann.errors import DegenerateAttentionError, ValidationError

# -2 ln 0.5 evaluated with the math module
TWO_LN2 = 1.3862943611198906
TANH_001 = 0.00999966667999946


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        hi = f()
        x[idx] = old - h
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * h)
    return g


def check_op(build, *shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal(s) for s in shapes]

    def value():
        return float(build(*[ad.Tensor(x) for x in xs]).data.sum())

    tape = Tape()
    leaves = [tape.leaf(x) for x in xs]
    out = build(*leaves).sum()
    tape.backward(out)
    for x, leaf in zip(xs, leaves):
        num = numeric_grad(value, x)
        np.testing.assert_allclose(leaf.grad, num, atol=tol, rtol=tol)


@pytest.mark.parametrize("name,build,shapes", [
    ("matmul", lambda a, b: a @ b, [(3, 4), (4, 2)]),
    ("mul-broadcast", lambda a, b: a * b, [(3, 4), (4,)]),
    ("div", lambda a, b: a / (b * b + 1.0), [(3,), (3,)]),
    ("tanh", lambda a: a.tanh() * a, [(5,)]),
    ("exp-log", lambda a: (a.exp() + 1.0).log(), [(5,)]),
    ("sigmoid", lambda a: a.sigmoid(), [(5,)]),
    ("relu", lambda a: (a + 0.05).relu() * a, [(6,)]),
    ("rowsum", lambda a: a.sum(axis=1, keepdims=True) * a, [(3, 4)]),
    ("index", lambda a: a[1:] * a[:-1], [(5, 2)]),
    ("l2norm", lambda a: ad.l2_normalize_rows(a) * np.arange(4.0), [(3, 4)]),
    ("softabs", lambda a: ad.softabs(a, 10.0), [(7,)]),
    ("softstep", lambda a: ad.softstep(a * 3.0), [(7,)]),
    ("conv2d", lambda x, w, b: ad.conv2d(x, w, b), [(2, 2, 6, 6), (3, 2, 3, 3), (3,)]),
    ("dense", lambda x, w, b: ad.dense(x, w, b), [(4, 5), (5, 3), (3,)]),
])
def test_primitive_gradients(name, build, shapes):
    check_op(build, *shapes)


def test_maxpool_gradient():
    # distinct values keep the max away from ties
    x = np.random.default_rng(1).permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) / 10.0
    tape = Tape()
    leaf = tape.leaf(x)
    w = np.random.default_rng(2).standard_normal((2, 2, 3, 3))
    tape.backward((ad.maxpool2(leaf) * w).sum())
    num = numeric_grad(lambda: float((ad.maxpool2(ad.Tensor(x)).data * w).sum()), x)
    np.testing.assert_allclose(leaf.grad, num, atol=1e-6)


def test_full_pipeline_gradient():
    # 2-way 1-shot toy problem, float64, finite differences on every parameter
    arch = Architecture((("conv", 3, 3), ("pool",), ("conv", 3, 3)), d=16, input_size=8)
    rng = np.random.default_rng(0)
    p = init_params(arch, rng, dtype=np.float64)
    imgs = rng.random((4, 8, 8))
    sl, ql = np.array([0, 1]), np.array([0, 1])
    reg = RegularizerSpec(enabled=True, a=5.0, delta=0.1)

    def loss(tape=None, leaves=None):
        E = forward(p, imgs, tape=tape, leaves=leaves)
        P, _ = attention_probs(E[2:], E[:2], sl, 2, SharpeningSpec())
        _, avg = log_loss(P, np.eye(2)[ql])
        return total_loss(avg, E[:2], reg)

    tape, leaves = Tape(), {}
    tape.backward(loss(tape, leaves))
    for k, leaf in leaves.items():
        num = numeric_grad(lambda: float(loss()), p.tensors[k])
        rel = np.linalg.norm(leaf.grad - num) / max(np.linalg.norm(num), 1e-12)
        assert rel <= 1e-4, k


def test_log_loss_examples():
    lam, avg = log_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))
    assert lam[0] == pytest.approx(TWO_LN2, abs=1e-12)
    assert avg == pytest.approx(TWO_LN2 / 2, abs=1e-12)
    lam, _ = log_loss(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert 0 <= lam[0] < 1e-6
    lam, _ = log_loss(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert np.isfinite(lam[0]) and lam[0] > 10
    with pytest.raises(ValidationError):
        log_loss(np.ones((2, 3)) / 3, np.ones((2, 2)))


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_log_loss_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(4), size=6)
    Y = np.eye(4)[rng.integers(0, 4, 6)]
    perm = rng.permutation(4)
    a, _ = log_loss(P, Y)
    b, _ = log_loss(P[:, perm], Y[:, perm])
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_attention_probs_degenerate():
    Q = np.array([[1.0, 0.0]])
    K = np.array([[0.0, 1.0], [0.0, 2.0]])
    with pytest.raises(DegenerateAttentionError):
        attention_probs(Q, K, [0, 1], 2, SharpeningSpec("absolute"))
    P, alpha = attention_probs(Q, K, [0, 1], 2, SharpeningSpec())
    np.testing.assert_allclose(P, [[0.5, 0.5]])
    np.testing.assert_allclose(alpha, [[0.0, 0.0]], atol=1e-15)


def test_occupancy_regularizer():
    rng = np.random.default_rng(0)
    balanced = np.concatenate([np.full((4, 256), 0.3), np.full((4, 256), -0.3)], axis=1)
    assert occupancy_loss(balanced) == pytest.approx(0.0, abs=1e-12)
    assert occupancy_loss(np.abs(rng.standard_normal((4, 512))) + 0.1) == pytest.approx(0.25, abs=1e-6)


def test_aux_regularizer():
    assert aux_loss(np.zeros((1, 8))) == pytest.approx(TANH_001, abs=1e-12)
    xs = np.linspace(0, 0.05, 11)
    vals = [aux_loss(np.full((1, 4), x)) for x in xs]
    assert np.all(np.diff(vals) < 0)


def test_total_loss_disabled_is_log_loss():
    K = np.random.default_rng(0).standard_normal((3, 8))
    assert total_loss(0.7, K, RegularizerSpec()) == 0.7
    spec = RegularizerSpec(enabled=True)
    assert total_loss(0.7, K, spec) == pytest.approx(
        0.7 + 10 * occupancy_loss(K, spec) + 0.1 * aux_loss(K, spec))
    with pytest.raises(ValidationError):
        RegularizerSpec(a=0)


def test_adam():
    class P:
        tensors = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.zeros(3)}

    opt = Adam(P, AdamConfig(lr=0.01))
    opt.step(P)
    np.testing.assert_allclose(P.tensors["w"], [1.0, -2.0, 3.0])
    # first real step moves each weight by about lr against the gradient sign
    opt = Adam(P, AdamConfig(lr=0.01))
    P.grads["w"] = np.array([0.5, -3.0, 1e-3])
    opt.step(P)
    np.testing.assert_allclose(P.tensors["w"], [0.99, -1.99, 2.99], atol=1e-6)
    with pytest.raises(ValidationError):
        AdamConfig(lr=0)
    with pytest.raises(ValidationError):
        AdamConfig(beta1=1.0)


def test_forward_properties(tiny_arch, rng):
    p = init_params(tiny_arch, rng)
    np.testing.assert_array_equal(forward(p, np.zeros((32, 32))), 0.0)
    x = rng.random((3, 32, 32))
    a = forward(p, x)
    assert a.shape == (3, 32)
    np.testing.assert_array_equal(a, forward(p, x))
    np.testing.assert_allclose(forward(p, x[1]), a[1], rtol=1e-5, atol=1e-6)
    with pytest.raises(ValidationError):
        forward(p, rng.random((2, 28, 28)))


def test_desk_architecture_shapes():
    arch = Architecture()
    assert arch.d == 512
    assert dict(arch.shapes())["dense.w"] == (256, 512)


def test_checkpoint_roundtrip(tmp_path, tiny_arch, rng):
    p = init_params(tiny_arch, rng)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p, {"episode": 7})
    q, meta = load_checkpoint(path)
    assert meta["episode"] == 7 and q.arch == p.arch
    for k in p.tensors:
        np.testing.assert_array_equal(p.tensors[k], q.tensors[k])
    data = dumps_checkpoint(p)
    with pytest.raises(ValidationError):
        loads_checkpoint(b"JUNK" + data[4:])
    with pytest.raises(ValidationError):
        loads_checkpoint(data[:-5])


def test_train_episode_overfits_single_episode(small_ds, tiny_arch):
    ep = sample_episode(small_ds, "train", 5, 1, 10, NO_AUGMENT, np.random.default_rng(0))
    p = init_params(tiny_arch, np.random.default_rng(1), dtype=np.float64)
    opt = Adam(p, AdamConfig(lr=3e-3))
    recs = [train_episode(p, opt, ep) for _ in range(150)]
    assert recs[-1].accuracy == 1.0
    assert recs[-1].loss < recs[0].loss
    assert recs[0].losses.shape == (10,) and recs[0].P.shape == (10, 5)


def test_run_training_checkpoints(small_ds, tiny_arch, tmp_path):
    cfg = TrainingConfig(max_episodes=7, interval=3, val_episodes=4, b=8, arch=tiny_arch, lr=1e-3)
    assert cfg.checkpoints == 2
    res = run_training(cfg, small_ds, log_path=tmp_path / "log.csv")
    assert [e for e, _ in res.checkpoints] == [3, 6]
    assert res.best_val_accuracy == max(v for _, v in res.checkpoints)
    assert res.best_episode in (3, 6)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode,loss,train_accuracy,val_accuracy" and len(lines) == 8
    again = run_training(cfg, small_ds)
    for k in res.params.tensors:
        np.testing.assert_array_equal(res.params.tensors[k], again.params.tensors[k])


def test_training_config_validation():
    with pytest.raises(ValidationError):
        TrainingConfig(max_episodes=0)
    with pytest.raises(ValidationError):
        TrainingConfig(max_episodes=10, interval=20)
    with pytest.raises(ValidationError):
        TrainingConfig(lr=-1.0)


def test_streams_are_independent():
    a = rngmod.stream(0, "episodes", 1).random()
    b = rngmod.stream(0, "episodes", 2).random()
    c = rngmod.stream(0, "validation", 1).random()
    assert len({a, b, c}) == 3
    assert a == rngmod.stream(0, "episodes", 1).random()
