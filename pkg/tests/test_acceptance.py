"""Acceptance checks, one test per criterion.

The terminal summary lists a PASS/FAIL line for every criterion (see the
hooks in conftest.py).  Criteria 8 and 9 train real models and take tens of
minutes on one core; they are marked ``slow`` but run by default.
"""

import json
import math
import time

import numpy as np
import pytest
from conftest import write_dataset

from mebm.checks import OPS, run_gradcheck
from mebm.cli import RunConfig, main, run_ablation
from mebm.config import AblationFlags, ModelConfig
from mebm.data import (
    N_CLASSES, PHONEMES, SynthSpec, iter_synth_sessions, read_megb, session_normalize, synth_session,
    write_megb,
)
from mebm.metrics import f1_macro, topk_acc_macro
from mebm.model import build_model, forward, load_checkpoint, save_checkpoint
from mebm.rng import RngStream
from mebm.sampling import WindowPool, build_validation_set, n_prime_train, n_prime_val
from mebm.training import LossWeights, TrainConfig, fit_pools

REDUCED = {"d": 64, "n_multiscale_blocks": 6, "n_bm_blocks": 2}


def detail(record_property, text):
    print(text)
    record_property("detail", text)


# -- 1. gradients ---------------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_gradcheck_suite(record_property):
    t0 = time.perf_counter()
    results = run_gradcheck()
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    detail(record_property, f"{len(results)} checks, worst {worst.op} {worst.max_rel_error:.2e}, {elapsed:.0f}s")
    covered = {r.op.removesuffix("_depthwise").removesuffix("_grouped") for r in results}
    assert covered == set(OPS) | {"model"}
    assert all(r.max_rel_error < 1e-4 for r in results)
    assert elapsed < 300


# -- 2. shapes and normalization ------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_default_forward_contract(record_property):
    model = build_model(ModelConfig(), seed=0)
    g = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        x = g.standard_normal((100, 306, 125)).astype(np.float32)
        p = forward(model, x).data
        assert p.shape == (100, 39)
        worst = max(worst, float(np.max(np.abs(p.astype(np.float64).sum(axis=1) - 1.0))))
    detail(record_property, f"1000 inputs, max |row sum - 1| = {worst:.1e}")
    assert worst <= 1e-6


# -- 3. parameter count ---------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_default_parameter_count(record_property):
    a = build_model(ModelConfig(), seed=0).n_trainable()
    b = build_model(ModelConfig(), seed=1).n_trainable()
    detail(record_property, f"default config has {a:,} trainable parameters")
    assert a == b
    assert 3_000_000 <= a <= 6_500_000


# -- 4. sampling rules ----------------------------------------------------------------------------

def piecewise_val(n):
    if n >= 100:
        return 100
    return max(1, round(n) if n >= 50 else round(1.5 * n))


def piecewise_train(n):
    if n >= 100:
        return {100}
    if n >= 50:
        r = round(n)
        return set(range(max(1, r - 5), min(r + 5, 100) + 1))
    return {max(1, round(2 * n))}


@pytest.mark.criterion(4)
def test_sampling_rule_oracle(record_property):
    rng = RngStream(0)
    sweep = np.arange(1, 301) * 0.5
    for n in sweep:
        assert n_prime_val(n) == piecewise_val(n)
        allowed = piecewise_train(n)
        v = n_prime_train(n, rng)
        assert v in allowed
        if len(allowed) == 1:
            assert v == next(iter(allowed))
    draws = np.array([n_prime_train(60, rng) for _ in range(10_000)])
    counts = np.bincount(draws - 55, minlength=11)
    p = 1 / 11
    sigma = math.sqrt(10_000 * p * (1 - p))
    z = np.abs(counts - 10_000 * p) / sigma
    detail(record_property, f"{len(sweep)} n values; n=60 bin counts {counts.min()}..{counts.max()}, max |z| {z.max():.2f}")
    assert len(counts) == 11 and draws.min() == 55 and draws.max() == 65
    assert np.all(z < 3)


# -- 5. validation construction -------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_validation_set_312(record_property):
    spec = SynthSpec(n_sessions=2, events_per_class_per_session=6, snr=2.0, seed=11)
    sessions = [session_normalize(r) for r in iter_synth_sessions(spec)]
    a = build_validation_set(sessions, seed=3)
    b = build_validation_set(sessions, seed=3)
    c = build_validation_set(sessions, seed=4)
    per_class = np.bincount([s.phoneme_id for s in a.samples], minlength=N_CLASSES)
    detail(record_property, f"{len(a.samples)} samples, {per_class.min()}..{per_class.max()} per class")
    assert len(a.samples) == 312 and np.all(per_class == 8)
    xa, ya = a.arrays()
    xb, yb = b.arrays()
    assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
    assert not np.array_equal(xa, c.arrays()[0])


# -- 6. loss weights ------------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_loss_weight_table(record_property):
    table = {"ey": 0.05, "ay": 3.00, "uh": 10.00, "uw": 3.00, "s": 0.80,
             "sh": 3.00, "m": 3.00, "ae": 3.00, "jh": 1.50, "ah": 2.00}
    expected = np.array([table.get(p, 1.0) for p in PHONEMES])
    vec = LossWeights.default().vector
    detail(record_property, f"{int(np.sum(vec != 1.0))} listed values, {int(np.sum(vec == 1.0))} ones")
    assert np.array_equal(vec, expected)
    assert int(np.sum(expected == 1.0)) == 29


# -- 7. metrics -----------------------------------------------------------------------------------

def brute_f1(truth, pred):
    scores = []
    for c in sorted(set(truth) | set(pred)):
        tp = sum(t == c and p == c for t, p in zip(truth, pred))
        fp = sum(t != c and p == c for t, p in zip(truth, pred))
        fn = sum(t == c and p != c for t, p in zip(truth, pred))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / len(scores)


def brute_topk(truth, probs, k):
    hits = {}
    for t, row in zip(truth, probs):
        order = sorted(range(len(row)), key=lambda c: (-row[c], c))
        hits.setdefault(t, []).append(t in order[:k])
    return sum(sum(h) / len(h) for h in hits.values()) / len(hits)


@pytest.mark.criterion(7)
def test_metric_oracles(record_property):
    g = np.random.default_rng(7)
    worst_f1 = worst_topk = 0.0
    for i in range(500):
        n = int(g.integers(1, 80))
        truth = g.integers(0, int(g.integers(1, 40)), n)
        pred = np.where(g.random(n) < 0.4, truth, g.integers(0, 39, n))
        worst_f1 = max(worst_f1, abs(f1_macro(truth, pred) - brute_f1(truth.tolist(), pred.tolist())))
    for i in range(500):
        n = int(g.integers(1, 40))
        truth = g.integers(0, 39, n)
        probs = g.integers(1, 5 if i % 2 else 10_000, (n, 39)).astype(np.float64)
        probs /= probs.sum(axis=1, keepdims=True)
        k = int(g.integers(1, 40))
        worst_topk = max(worst_topk, abs(topk_acc_macro(truth, probs, k) - brute_topk(truth.tolist(), probs.tolist(), k)))
    hand = f1_macro([0, 0, 1, 1], [0, 0, 0, 0])
    detail(record_property, f"max error f1 {worst_f1:.1e}, top-k {worst_topk:.1e}; hand case {hand:.6f}")
    assert worst_f1 <= 1e-12 and worst_topk <= 1e-12
    assert hand == pytest.approx(1 / 3, abs=1e-12)


# -- 8. learning on synthetic data ----------------------------------------------------------------

def normalized_pool(spec, sessions):
    gen = (session_normalize(synth_session(spec, s), inplace=True) for s in sessions)
    return WindowPool(gen, release=True)


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_synthetic_learning(record_property):
    spec = SynthSpec(n_sessions=5, events_per_class_per_session=120, snr=4.0, seed=0)
    t0 = time.perf_counter()
    val_pool = normalized_pool(spec, [3, 4])
    validation = build_validation_set(val_pool, seed=0)
    del val_pool
    pool = normalized_pool(spec, [0, 1, 2])
    cfg = TrainConfig(epochs=15, samples_per_epoch=32 * 256, seed=0)
    res = fit_pools(pool, validation, ModelConfig(**REDUCED), cfg, AblationFlags())
    elapsed = time.perf_counter() - t0
    last = res.history[-1]
    detail(record_property, f"final f1 {last.val_f1_macro:.4f} top3 {last.val_top3:.4f} "
                            f"(chance {1 / 39:.4f}), {elapsed / 60:.1f} min")
    assert last.val_f1_macro >= 0.90
    assert last.val_top3 >= 0.98
    assert elapsed < 30 * 60


# -- 9. ablation direction ------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(9)
def test_bm_encoder_ablation_direction(tmp_path, record_property):
    manifest = write_dataset(tmp_path, n_train=3, n_val=2, events=4, snr=1.0, seed=7, class_specificity=0.02)
    cfg = RunConfig.from_dict({"manifest": str(manifest), "model": REDUCED, "seeds": list(range(6)),
                               "train": {"epochs": 6, "samples_per_epoch": 16 * 256}})
    results = run_ablation(cfg, ["Full Model", "w/o BM Encoder"])
    full = np.array(results["Full Model"]["f1"])
    ablated = np.array(results["w/o BM Encoder"]["f1"])
    pooled = math.sqrt((full.std(ddof=1) ** 2 + ablated.std(ddof=1) ** 2) / 2)
    margin = full.mean() - ablated.mean()
    detail(record_property, f"full {full.mean():.4f} w/o BM {ablated.mean():.4f} "
                            f"margin {margin:.4f} pooled std {pooled:.4f}")
    (tmp_path / "ablation.json").write_text(json.dumps(results))
    assert margin > pooled


# -- 10. determinism ------------------------------------------------------------------------------

@pytest.mark.criterion(10)
def test_train_runs_are_byte_identical(tmp_path, record_property):
    assert main(["synth", "--sessions", "2", "--events-per-class", "6", "--seed", "1",
                 "--out", str(tmp_path / "data")]) == 0
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"manifest": "data/manifest.json",
                               "model": {"d": 16, "n_multiscale_blocks": 2, "n_bm_blocks": 1},
                               "train": {"epochs": 3, "batch_size": 32, "samples_per_epoch": 96}}))
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / run)]) == 0
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("history.csv", "checkpoint.mebm")}
    detail(record_property, ", ".join(f"{k} {'identical' if v else 'differs'}" for k, v in same.items()))
    assert all(same.values())


# -- 11. round trips ------------------------------------------------------------------------------

@pytest.mark.criterion(11)
def test_file_round_trips(tmp_path, record_property):
    rec = synth_session(SynthSpec(n_sessions=1, events_per_class_per_session=3, snr=2.0, seed=5), 0)
    write_megb(rec, tmp_path / "a.megb")
    write_megb(read_megb(tmp_path / "a.megb"), tmp_path / "b.megb")
    megb_same = (tmp_path / "a.megb").read_bytes() == (tmp_path / "b.megb").read_bytes()

    cfg = ModelConfig(**REDUCED)
    model = build_model(cfg, seed=2)
    g = np.random.default_rng(0)
    for p in model.params.values():
        p.data += g.standard_normal(p.data.shape).astype(p.data.dtype)
    for buf in model.buffers.values():
        buf += g.random(buf.shape).astype(buf.dtype)
    save_checkpoint(model, tmp_path / "a.mebm")
    save_checkpoint(load_checkpoint(tmp_path / "a.mebm", build_model(cfg, seed=9)), tmp_path / "b.mebm")
    ckpt_same = (tmp_path / "a.mebm").read_bytes() == (tmp_path / "b.mebm").read_bytes()
    detail(record_property, f"megb {'identical' if megb_same else 'differs'}, "
                            f"checkpoint {'identical' if ckpt_same else 'differs'}")
    assert megb_same and ckpt_same
