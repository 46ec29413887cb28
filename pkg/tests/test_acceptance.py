"""Exit criteria for the package, one marker per criterion.

A summary line per criterion is printed at the end of the pytest run.
"""

import math
import time

import numpy as np
import pytest

from ltfusion import gradcheck
from ltfusion import model as head
from ltfusion.cli import main
from ltfusion.data import DatasetConfig, Sample, generate, read_dataset, write_dataset
from ltfusion.evaluate import (
    build_report,
    confusion_matrix,
    macro_prf,
    top_k_accuracy,
)
from ltfusion.experiment import build_config, grid_orderings, run_grid, train_run, gen_dataset
from ltfusion.loss import GammaSchedule, ce_loss, focal_loss, gamma_at_epoch, gamma_sequence
from ltfusion.numkernel import Rng, softmax
from ltfusion.optim import AdamWState, adamw_init, adamw_step

SEEDS = (41, 42, 43, 44, 45)


@pytest.mark.acceptance(1, "focal(gamma=0) equals cross-entropy to 1e-12")
def test_loss_identity():
    rng = Rng(2024)
    worst = 0.0
    for _ in range(1000):
        k = rng.randint(2, 12)
        probs = softmax(rng.gaussian(k) * 3.0)
        y = rng.randint(0, k - 1)
        f, c = focal_loss(probs, y, 0.0), ce_loss(probs, y)
        worst = max(worst, abs(f.value - c.value), float(np.max(np.abs(f.grad_logits - c.grad_logits))))
    assert worst <= 1e-12


@pytest.mark.acceptance(2, "gradcheck max relative error <= 1e-6 in under 10 s")
def test_gradcheck(capsys):
    t0 = time.perf_counter()
    code = main(["gradcheck"])
    elapsed = time.perf_counter() - t0
    loss_res, model_res = gradcheck.run_all(0)
    assert sum(r.count for r in loss_res.values()) == 200
    assert set(loss_res) == {0.0, 0.1, 0.5, 1.0, 2.0}
    assert model_res.count == 20
    assert gradcheck.max_error(loss_res, model_res) <= 1e-6
    assert code == 0
    assert elapsed < 10.0


@pytest.mark.acceptance(3, "gamma schedule: 2.0 at epoch 0, 0.1 at the last epoch, strictly decreasing")
def test_schedule():
    s = GammaSchedule()
    assert abs(gamma_at_epoch(s, 0) - 2.0) <= 1e-12
    assert abs(gamma_at_epoch(s, s.total_epochs - 1) - 0.1) <= 1e-12
    seq = gamma_sequence(s)
    assert all(b < a for a, b in zip(seq, seq[1:]))


@pytest.mark.acceptance(4, "scalar oracles: focal 0.173287, CE 0.693147, AdamW step 0.999685")
def test_scalar_oracles():
    assert abs(focal_loss([0.5, 0.5], 0, 2.0).value - 0.173287) <= 1e-6
    assert abs(ce_loss([0.5, 0.5], 0).value - 0.693147) <= 1e-6
    state = adamw_init({"x": ()})
    theta = adamw_step(state, {"x": np.float64(1.0)}, {"x": np.float64(0.5)})["x"]
    assert abs(float(theta) - 0.999685) <= 1e-6


@pytest.mark.acceptance(5, "metric oracles: top1 0.75, macro F1 0.7778; confusion rows = supports")
def test_metric_oracles():
    labels, preds = [0, 0, 1, 2], [0, 1, 1, 2]
    probs = np.eye(3)[preds]
    assert top_k_accuracy(probs, labels, 1) == 0.75
    assert abs(macro_prf(confusion_matrix(preds, labels, 3))["macro_f1"] - 0.7778) <= 1e-4
    report = build_report(probs, labels)
    assert report.confusion.sum(axis=1).tolist() == [2, 1, 1] == report.support.tolist()


@pytest.fixture(scope="module")
def grids(tmp_path_factory):
    out = {}
    for seed in SEEDS:
        root = tmp_path_factory.mktemp(f"grid{seed}")
        t0 = time.perf_counter()
        result = run_grid(build_config({"seed": seed}), root)
        out[seed] = (root, result, time.perf_counter() - t0)
        print(f"\nseed {seed} ({out[seed][2]:.1f}s)\n{result['table']}")
    return out


@pytest.mark.acceptance(5, "metric oracles: top1 0.75, macro F1 0.7778; confusion rows = supports")
def test_confusion_rows_on_every_evaluation(grids):
    for _, result, _ in grids.values():
        for r in result["reports"].values():
            assert r.confusion.sum(axis=1).tolist() == r.support.tolist()
            assert math.isclose(np.trace(r.confusion) / r.support.sum(), r.top1, abs_tol=1e-15)


@pytest.mark.acceptance(6, "grid orderings hold on >= 4 of 5 seeds; seed-42 grid < 5 min")
def test_grid_orderings(grids):
    tally = {}
    for seed, (_, result, _) in grids.items():
        for name, ok in grid_orderings(result["reports"]).items():
            tally.setdefault(name, []).append(ok)
    for name, oks in tally.items():
        print(f"{name}: {sum(oks)}/5 seeds")
    assert grids[42][2] < 300.0
    for name, oks in tally.items():
        assert sum(oks) >= 4, f"{name} held on only {sum(oks)} of 5 seeds"


@pytest.mark.acceptance(6, "grid orderings hold on >= 4 of 5 seeds; seed-42 grid < 5 min")
def test_default_training_budget(tmp_path):
    data = tmp_path / "d"
    gen_dataset(DatasetConfig(seed=42), data)
    t0 = time.perf_counter()
    train_run(build_config({"seed": 42}), data, "a", tmp_path / "r")
    assert time.perf_counter() - t0 < 60.0


@pytest.mark.acceptance(7, "seed-42 pipeline is byte-for-byte reproducible")
def test_determinism(grids, tmp_path):
    first = grids[42][0]
    run_grid(build_config({"seed": 42}), tmp_path)
    compared = 0
    for path in sorted(first.rglob("*")):
        # run_*.json carries wall-clock durations
        if path.is_dir() or path.name.startswith("run_"):
            continue
        other = tmp_path / path.relative_to(first)
        assert other.read_bytes() == path.read_bytes(), str(path.relative_to(first))
        compared += 1
    # 4 data files, 2 x (2 checkpoints + 3 reports + 1 confusion), 2 summaries
    assert compared == 4 + 2 * 6 + 2


@pytest.mark.acceptance(8, "dataset and checkpoint round-trips are bit-exact")
def test_round_trips(tmp_path):
    rng = np.random.default_rng(8)
    for trial in range(10):
        samples = []
        for i in range(int(rng.integers(1, 8))):
            t = int(rng.integers(1, 10))
            scale = 10.0 ** rng.integers(-200, 200)
            samples.append(Sample(i, int(rng.integers(0, 5)), rng.normal(size=(t, 3)) * scale,
                                  rng.standard_cauchy(size=(t, 4))))
        write_dataset(tmp_path / "d.jsonl", samples)
        back = read_dataset(tmp_path / "d.jsonl")
        assert [s.id for s in back] == [s.id for s in samples]
        for a, b in zip(samples, back):
            assert a.seq_a.tobytes() == b.seq_a.tobytes() and a.seq_b.tobytes() == b.seq_b.tobytes()

        p = head.init_params(Rng(trial), 4, 6, 3)
        p.b1 = rng.normal(size=6) * 1e-250
        p.b2 = rng.normal(size=3) * 1e250
        opt = adamw_init({n: a.shape for n, a in p.as_dict().items()})
        adamw_step(opt, p.as_dict(), {n: rng.normal(size=a.shape) for n, a in p.as_dict().items()})
        head.save_checkpoint(tmp_path / "c.json", p, {"trial": trial}, opt.to_dict())
        q, meta, opt_doc = head.load_checkpoint(tmp_path / "c.json")
        for name in head.PARAM_NAMES:
            assert getattr(q, name).tobytes() == getattr(p, name).tobytes()
        restored = AdamWState.from_dict(opt_doc)
        for name in head.PARAM_NAMES:
            assert restored.m[name].tobytes() == opt.m[name].tobytes()
            assert restored.v[name].tobytes() == opt.v[name].tobytes()
        assert meta == {"trial": trial}
