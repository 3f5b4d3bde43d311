"""End-to-end acceptance checks, one test per criterion.

Each test prints a single `criterion N (...): PASS|FAIL` line; the training
runs in criterion 6 dominate the wall time of the whole suite.
"""
import time

import numpy as np

import motionrnn as mr
from motionrnn import cli
from conftest import fd_gradient, max_rel_err

from test_metrics import (naive_csi, naive_gdl, naive_mae, naive_mse,
                          naive_psnr, naive_ssim)
from test_model import plain_stack_forward


def report(n, name, ok):
    print(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'}")
    assert ok, f"criterion {n} ({name}) failed"


# ---------------------------------------------------------------------------

def test_criterion_1_gradient_integrity():
    t0 = time.monotonic()
    cfg = mr.ModelConfig(layers=2, channels=8, k=3, in_channels=1,
                         height=8, width=8, lstm_kernel=3, dtype="float64")
    model = mr.MotionRnn(cfg, seed=3)
    rng = np.random.default_rng(17)
    frames = rng.uniform(0.0, 1.0, (1, 4, 1, 8, 8))
    batch = mr.SequenceBatch(frames, 2)

    def scalar():
        preds, _ = model.rollout(batch, horizon=2)  # 3 step calls total
        s = None
        for j, p in enumerate(preds):
            d = p - mr.Tensor(frames[:, 2 + j])
            term = (d * d).mean()
            s = term if s is None else s + term
        return s

    params = model.named_parameters()
    with mr.Tape() as tape:
        loss = scalar()
    mr.backward(loss, tape)
    analytic = {k: p.grad.copy() for k, p in params.items()}

    worst = 0.0
    for k, p in params.items():
        numeric = fd_gradient(lambda: scalar().data.item(), p.data, eps=1e-5)
        worst = max(worst, max_rel_err(analytic[k], numeric))
    elapsed = time.monotonic() - t0
    print(f"  max rel err {worst:.3g} over {sum(p.data.size for p in params.values())} "
          f"params in {elapsed:.0f}s")
    report(1, "gradient integrity", worst < 1e-4 and elapsed < 300.0)


def test_criterion_2_trend_closed_form():
    rng = np.random.default_rng(5)
    f = rng.normal(size=(1, 18, 4, 4))
    worst = 0.0
    for alpha in (0.1, 0.5, 1.0):
        cfg = mr.TrendConfig(alpha=alpha)
        d0 = rng.normal(size=f.shape)
        cur = d0.copy()
        for n in range(1, 101):
            cur = mr.trend_update(f, cur, cfg)
            closed = f + (1.0 - alpha) ** n * (d0 - f)
            worst = max(worst, float(np.abs(cur - closed).max()))
    report(2, "trend closed form", worst <= 1e-12)


def test_criterion_3_warp_exactness():
    rng = np.random.default_rng(11)
    k = 3
    enc = rng.uniform(0.0, 1.0, (2, 4, 6, 6))
    zero = np.zeros((2, 2 * k * k, 6, 6))
    got = mr.warp(mr.Tensor(enc), mr.Tensor(zero), k).data
    h = w = 6
    gather_ok = True
    for i, (py, px) in enumerate(mr.neighborhood_offsets(k)):
        want = enc[:, :, np.clip(np.arange(h) + py, 0, h - 1)]
        want = want[:, :, :, np.clip(np.arange(w) + px, 0, w - 1)]
        gather_ok = gather_ok and np.array_equal(got[..., i], want)

    img = mr.Tensor(np.array([[[[0.0, 1.0]]]]))
    f = np.zeros((1, 2, 1, 2))
    f[0, 1, 0, 0] = -0.5  # sample column 0 - (-0.5) = 0.5
    midpoint_ok = mr.warp(img, mr.Tensor(f), 1).data[0, 0, 0, 0, 0] == 0.5

    const = mr.Tensor(np.full((1, 2, 5, 5), 0.37))
    fields = mr.Tensor(rng.uniform(-3.0, 3.0, (1, 18, 5, 5)))
    const_ok = np.abs(mr.warp(const, fields, 3).data - 0.37).max() < 1e-12

    report(3, "warp exactness", gather_ok and midpoint_ok and const_ok)


def test_criterion_4_structural_degeneration():
    cfg = mr.ModelConfig(layers=3, channels=8, k=3, in_channels=1,
                         height=16, width=16, lstm_kernel=3, dtype="float64",
                         enable_mh=False, enable_tv=False, enable_tm=False)
    model = mr.MotionRnn(cfg, seed=9)
    rng = np.random.default_rng(2)
    frames = rng.uniform(0.0, 1.0, (2, 4, 1, 16, 16))

    plain = plain_stack_forward(model, frames)
    state = model.init_state(2)
    ok = True
    for t in range(4):
        out, state, traces = model.step(mr.Tensor(frames[:, t]), state)
        ok = ok and np.array_equal(out.data, plain[t])
        ok = ok and all(tr is None for tr in traces)
    report(4, "structural degeneration", ok)


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(31)
    oracle = {"mse": naive_mse, "mae": naive_mae, "psnr": naive_psnr,
              "ssim": naive_ssim, "gdl": naive_gdl,
              "csi": lambda a, b: naive_csi(a, b, 0.5)}
    ours = {"mse": mr.mse, "mae": mr.mae, "psnr": mr.psnr, "ssim": mr.ssim,
            "gdl": mr.gdl, "csi": lambda a, b: mr.csi(a, b, 0.5)}
    worst = 0.0
    for _ in range(100):
        a = rng.uniform(0.0, 1.0, (16, 16))
        b = rng.uniform(0.0, 1.0, (16, 16))
        for name in oracle:
            worst = max(worst, abs(ours[name](a, b) - oracle[name](a, b)))
    h, m, fa = 5, 3, 2
    truth = np.zeros((4, 4))
    pred = np.zeros((4, 4))
    truth.flat[:h + m] = 1.0
    pred.flat[:h] = 1.0
    pred.flat[h + m:h + m + fa] = 1.0
    csi_ok = mr.csi(pred, truth, 0.5) == 0.5
    report(5, "metric oracles", worst < 1e-6 and csi_ok)


def test_criterion_6_desk_scale_directional(tmp_path):
    """Slow test: six 2000-iteration training runs (~15 min on one core)."""
    t0 = time.monotonic()
    gcfg = mr.GeneratorConfig(size=32, frames=10, split=5, sprites=1,
                              sprite_size=24, speed=(0.4, 1.2),
                              spin=(0.0, 0.0), scale_rate=(1.0, 1.0),
                              scale_bounds=(1.0, 1.0), thickness=0.14)
    train_data = mr.generate_batch(100, 200, gcfg)
    eval_data = mr.generate_batch(999, 32, gcfg)

    results = {True: [], False: []}
    reductions = []
    for full in (True, False):
        for seed in (0, 1, 2):
            mcfg = mr.ModelConfig(layers=2, channels=16, k=3, in_channels=1,
                                  height=32, width=32, lstm_kernel=3, patch=2,
                                  enable_mh=full, enable_tv=full,
                                  enable_tm=full)
            model = mr.MotionRnn(mcfg, seed=seed)
            tcfg = mr.TrainConfig(batch_size=4, iterations=2000, lr=2e-3,
                                  decay_steps=200, eval_interval=10 ** 9,
                                  seed=seed)
            res = mr.train(model, train_data, tcfg,
                           tmp_path / f"run_{int(full)}_{seed}", quiet=True)
            losses = np.asarray(res.losses)
            reductions.append(1.0 - losses[-50:].mean() / losses[:10].mean())
            emse, _ = mr.evaluate_model(model, eval_data, horizon=5)
            results[full].append(emse)

    med_full = float(np.median(results[True]))
    med_plain = float(np.median(results[False]))
    elapsed = time.monotonic() - t0
    directional = med_full <= med_plain
    converged = min(reductions) >= 0.60
    print(f"  median eval mse: motion={med_full:.5f} plain={med_plain:.5f}; "
          f"min loss reduction {min(reductions) * 100:.1f}%; "
          f"{elapsed / 60:.1f} min")
    report(6, "desk-scale directional result",
           directional and converged and elapsed < 45 * 60)


def test_criterion_7_ablation_structure(tmp_path):
    data = tmp_path / "d.vseq"
    assert cli.main(["gen-data", "--out", str(data), "--seed", "1",
                     "--count", "4", "--size", "16", "--frames", "6",
                     "--split", "3", "--sprites", "1",
                     "--sprite-size", "8"]) == 0
    out = tmp_path / "grid"
    assert cli.main(["ablate", "--data", str(data), "--out", str(out),
                     "--layers", "2", "--channels", "8", "--lstm-kernel", "3",
                     "--iters", "1", "--batch", "2", "--seed", "1"]) == 0
    rows = (out / "comparison.csv").read_text().splitlines()[1:]
    params = {tuple(r.split(",")[:3]): int(r.split(",")[3]) for r in rows}
    full = params[("1", "1", "1")]
    ok = (len(rows) == 8
          and params[("1", "0", "1")] < full
          and params[("1", "1", "0")] < full
          and all(params[("0",) + key[1:]] == params[key]
                  for key in params if key[0] == "1"))
    report(7, "ablation structure", ok)


def test_criterion_8_determinism(tmp_path):
    data = tmp_path / "d.vseq"
    assert cli.main(["gen-data", "--out", str(data), "--seed", "2",
                     "--count", "4", "--size", "16", "--frames", "6",
                     "--split", "3", "--sprites", "1",
                     "--sprite-size", "8"]) == 0
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["train", "--data", str(data), "--out", str(out),
                         "--layers", "2", "--channels", "8",
                         "--lstm-kernel", "3", "--iters", "3", "--batch", "2",
                         "--seed", "7"]) == 0
        blobs.append(((out / "model.ckpt").read_bytes(),
                      (out / "log.csv").read_bytes()))
    report(8, "determinism", blobs[0] == blobs[1])


def test_criterion_9_trend_visualization(tmp_path):
    cfg = mr.ModelConfig(layers=2, channels=16, k=3, in_channels=1,
                         height=16, width=16, lstm_kernel=3)
    model = mr.MotionRnn(cfg, seed=0)
    d = model.init_state(1).motion[0].d.data[0]
    assert d.shape[1:] == (8, 8)
    csv_path, svg_path = mr.trend_field_export(d, tmp_path / "trend")
    rows = csv_path.read_text().splitlines()[1:]
    ok = (len(rows) == 64
          and all(r.endswith(",0,0") for r in rows)
          and svg_path.read_text().count("<line") == 64)
    report(9, "trend visualization", ok)
