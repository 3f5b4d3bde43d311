import numpy as np
import pytest

from motionrnn import (AdamState, ModelConfig, MotionRnn, SequenceBatch,
                       Tape, Tensor, TrainConfig, adam_step, backward,
                       clip_gradients, evaluate_model, generate_batch,
                       GeneratorConfig, loss_l1l2, sampling_mask, train)
from conftest import check_grads, fd_gradient, max_rel_err


def small_model(seed=0, **kw):
    base = dict(layers=2, channels=8, k=3, in_channels=1, height=16, width=16,
                lstm_kernel=3)
    base.update(kw)
    return MotionRnn(ModelConfig(**base), seed=seed)


def tiny_data(seed=3, count=4):
    cfg = GeneratorConfig(size=16, frames=6, split=3, sprites=1, sprite_size=8)
    return generate_batch(seed, count, cfg)


# ---------------------------------------------------------------------------
# loss

def test_loss_worked_example():
    """|2| + |0| gives L1 = 1; 4 + 0 gives L2 = 2; total 3."""
    pred = Tensor(np.array([2.0, 0.0]))
    target = Tensor(np.array([0.0, 0.0]))
    assert loss_l1l2(pred, target).item() == pytest.approx(3.0, abs=1e-12)


def test_loss_zero_at_match(rng):
    x = Tensor(rng.random((2, 3, 4, 4)))
    assert loss_l1l2(x, Tensor(x.data.copy())).item() == 0.0


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        loss_l1l2(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


def test_loss_grads_match_fd(rng):
    pred = Tensor(rng.standard_normal((2, 3, 3)) + 0.7, requires_grad=True)
    target = Tensor(rng.standard_normal((2, 3, 3)))
    check_grads(lambda: loss_l1l2(pred, target), [pred])


# ---------------------------------------------------------------------------
# adam

def test_adam_first_step_is_signed_lr():
    """With fresh moments a first step moves by ~lr * sign(g)."""
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    g = np.array([0.3, -0.7])
    st = AdamState(lr=0.01)
    adam_step({"p": p}, {"p": g.copy()}, st)
    want = np.array([1.0, -2.0]) - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, want, atol=1e-12)


def test_adam_zero_gradient_is_identity():
    p = Tensor(np.array([3.0]), requires_grad=True)
    st = AdamState(lr=0.5)
    adam_step({"p": p}, {"p": np.zeros(1)}, st)
    assert p.data[0] == 3.0


def test_adam_five_step_scalar_oracle():
    """Hand-iterated reference on f(x) = x^2 must match to 1e-12."""
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x = 0.5
    m = v = 0.0
    want = []
    for t in range(1, 6):
        g = 2.0 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        want.append(x)

    p = Tensor(np.array([0.5]), requires_grad=True)
    st = AdamState(lr=lr)
    got = []
    for _ in range(5):
        adam_step({"x": p}, {"x": 2.0 * p.data.copy()}, st)
        got.append(p.data[0])
    assert np.allclose(got, want, atol=1e-12)


def test_adam_converges_on_quadratic():
    p = Tensor(np.array([5.0]), requires_grad=True)
    st = AdamState(lr=0.2)
    for _ in range(400):
        adam_step({"x": p}, {"x": 2.0 * p.data.copy()}, st)
    assert abs(p.data[0]) < 1e-3


def test_adam_shape_mismatch_error():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        adam_step({"p": p}, {"p": np.zeros(4)}, AdamState())


# ---------------------------------------------------------------------------
# clipping

def test_clip_returns_preclip_norm_and_scales():
    grads = {"a": np.array([3.0, 4.0]), "b": np.zeros(2)}
    norm = clip_gradients(grads, max_norm=2.5)
    assert norm == pytest.approx(5.0, abs=1e-12)
    assert np.allclose(grads["a"], [1.5, 2.0])
    assert np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())) == pytest.approx(2.5)


def test_clip_below_threshold_is_noop():
    grads = {"a": np.array([0.3, 0.4])}
    norm = clip_gradients(grads, max_norm=10.0)
    assert norm == pytest.approx(0.5)
    assert np.allclose(grads["a"], [0.3, 0.4])


# ---------------------------------------------------------------------------
# scheduled sampling

def test_sampling_mask_saturated_ends():
    rng = np.random.default_rng(0)
    assert sampling_mask(0, 8, 100, rng).all()            # eps = 1
    rng = np.random.default_rng(0)
    assert not sampling_mask(100, 8, 100, rng).any()      # eps = 0
    rng = np.random.default_rng(0)
    assert not sampling_mask(10 ** 9, 8, 100, rng).any()  # stays clamped


def test_sampling_mask_monte_carlo_rate():
    rng = np.random.default_rng(123)
    hits = sum(sampling_mask(25, 1, 100, rng)[0] for _ in range(10000))
    assert abs(hits / 10000 - 0.75) < 0.02


def test_sampling_mask_decay_validation():
    with pytest.raises(ValueError):
        sampling_mask(0, 4, 0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# end-to-end gradient through a rollout

def test_rollout_loss_grads_match_fd(rng):
    """Spot check a few parameters through 2 context + 2 horizon steps."""
    model = small_model(seed=2, channels=8, height=8, width=8, dtype="float64")
    frames = rng.random((1, 4, 1, 8, 8))
    batch = SequenceBatch(frames.astype(np.float32), 2)

    def f():
        preds, _ = model.rollout(batch, horizon=2)
        return (loss_l1l2(preds[0], Tensor(frames[:, 2]))
                + loss_l1l2(preds[1], Tensor(frames[:, 3])))

    params = model.named_parameters()
    picked = [params["embed.weight"], params["unit1.d0"], params["block2.gates.bias"],
              params["readout.bias"]]
    with Tape() as tape:
        out = f()
        backward(out, tape)
    worst = 0.0
    for t in picked:
        num = fd_gradient(lambda: float(f().data), t.data, eps=1e-6)
        worst = max(worst, max_rel_err(t.grad, num))
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# the loop

def test_train_writes_log_and_checkpoint(tmp_path):
    model = small_model()
    data = tiny_data()
    cfg = TrainConfig(batch_size=2, iterations=3, lr=1e-3, eval_interval=2, seed=0)
    res = train(model, data, cfg, tmp_path / "run", eval_data=data, quiet=True)
    log = (tmp_path / "run" / "log.csv").read_text().splitlines()
    assert log[0] == "iteration,loss,eval_mse,eval_ssim"
    assert len(log) == 4
    assert log[1].startswith("1,") and log[1].endswith(",,")
    parts = log[2].split(",")
    assert len(parts) == 4 and parts[2] != "" and parts[3] != ""
    assert (tmp_path / "run" / "model.ckpt").exists()
    assert len(res.losses) == 3
    assert res.eval_history and res.eval_history[0][0] == 2


def test_train_zero_iterations_saves_init(tmp_path):
    from motionrnn import load_checkpoint
    model = small_model(seed=17)
    before = {k: v.data.copy() for k, v in model.named_parameters().items()}
    cfg = TrainConfig(batch_size=2, iterations=0, lr=1e-3, seed=0)
    train(model, tiny_data(), cfg, tmp_path / "run", quiet=True)
    loaded = load_checkpoint(tmp_path / "run" / "model.ckpt")
    for k, v in loaded.named_parameters().items():
        assert np.array_equal(v.data, before[k]), k


def test_train_lr_zero_keeps_parameters(tmp_path):
    model = small_model(seed=5)
    before = {k: v.data.copy() for k, v in model.named_parameters().items()}
    cfg = TrainConfig(batch_size=2, iterations=2, lr=0.0, seed=0)
    train(model, tiny_data(), cfg, tmp_path / "run", quiet=True)
    for k, v in model.named_parameters().items():
        assert np.array_equal(v.data, before[k]), k


def test_train_is_deterministic(tmp_path):
    logs = []
    for run in range(2):
        model = small_model(seed=9)
        cfg = TrainConfig(batch_size=2, iterations=10, lr=1e-3, eval_interval=5, seed=4)
        train(model, tiny_data(), cfg, tmp_path / f"run{run}", eval_data=tiny_data(seed=8),
              quiet=True)
        logs.append((tmp_path / f"run{run}" / "log.csv").read_bytes())
        logs.append((tmp_path / f"run{run}" / "model.ckpt").read_bytes())
    assert logs[0] == logs[2]
    assert logs[1] == logs[3]


def test_train_loss_drops_on_single_batch(tmp_path):
    """Overfit 2 sequences: 500 iterations must cut the loss by >= 10x."""
    model = small_model(seed=1)
    data = tiny_data(count=2)
    cfg = TrainConfig(batch_size=2, iterations=500, lr=3e-3, decay_steps=1, seed=0)
    res = train(model, data, cfg, tmp_path / "run", quiet=True)
    end = float(np.mean(res.losses[-5:]))
    assert end < 0.1 * res.losses[0]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(iterations=-1).validate()
    with pytest.raises(ValueError):
        TrainConfig(decay_steps=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(eval_interval=0).validate()


def test_evaluate_model_returns_aggregates():
    model = small_model()
    data = tiny_data()
    emse, essim = evaluate_model(model, data, horizon=3)
    assert 0.0 <= emse <= 1.0
    assert -1.0 <= essim <= 1.0
