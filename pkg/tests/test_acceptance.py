"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`. The training-based criteria
(5 and 6) share a module-scoped set of trained models over 3 seeds.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

import reference_no_memory
from mp_oracle import mp_report

from crowdldl import datagen, losses, matching, metrics, model, train
from crowdldl.linalg import rng_stream

GRAD_DIMS = model.Dims(d1=16, d2=8, K=16, C=4, N=4)
TRAIN_LR = 1e-2   # desk-scale rate; the fine-tuning default of 1e-5 barely
                  # moves a from-scratch model in 50 epochs


def report(name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f"  ({detail})"
    print(line)
    return ok


# --- criterion 1: Hungarian vs brute force ---------------------------------

def test_criterion_1_hungarian_equals_brute_force():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    mismatches = 0
    for n in range(2, 8):
        for _ in range(1000):
            cost = rng.uniform(-1, 0, size=(n, n))
            if matching.hungarian(cost).total_cost != matching.brute_force_assign(cost).total_cost:
                mismatches += 1
    elapsed = time.monotonic() - t0
    ok = mismatches == 0 and elapsed < 10
    assert report("1 hungarian == brute force, N=2..7 x1000",
                  ok, f"{mismatches} mismatches, {elapsed:.1f}s")


# --- criterion 2: gradient correctness -------------------------------------

def test_criterion_2_gradient_correctness():
    t0 = time.monotonic()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        params = model.init(GRAD_DIMS, rng_stream(seed, "init"))
        features = rng.normal(size=(2, GRAD_DIMS.d1))
        labels = [sorted(rng.integers(0, GRAD_DIMS.C, size=GRAD_DIMS.N).tolist())
                  for _ in range(2)]
        dists = np.stack([datagen.vote_distribution(l, GRAD_DIMS.C) for l in labels])
        rep = train.grad_check(params, features, labels, dists, step=1e-5)
        worst = max(worst, max(rep.values()))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-4 and elapsed < 60
    assert report("2 analytic vs finite-difference gradients, 5 seeds",
                  ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")


# --- criterion 3: loss anchor values ---------------------------------------

def test_criterion_3_loss_anchors():
    m = np.random.default_rng(0).normal(size=(3, 4))
    sub_same, _ = losses.subjectivity_loss([m.copy(), m.copy()])
    sub_anti, _ = losses.subjectivity_loss([np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]])])
    l_mat, _, _ = losses.matching_loss([[0]], [[np.array([0.5, 0.5])]])
    l_kl, _ = losses.kl_loss(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    checks = {
        "L_sub identical = 1": abs(sub_same - 1.0),
        "L_sub antisymmetric = 0": abs(sub_anti),
        "L_mat single uniform = ln 2": abs(l_mat - np.log(2)),
        "L_KL one-hot vs uniform = ln 2": abs(l_kl - np.log(2)),
    }
    worst = max(checks.values())
    assert report("3 loss anchor values within 1e-12", worst < 1e-12,
                  f"max dev {worst:.1e}")


# --- criterion 4: metric oracle --------------------------------------------

def test_criterion_4_metric_oracle():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 9))
        d = rng.dirichlet(np.ones(c))
        d_hat = rng.dirichlet(np.ones(c))
        got = metrics.report_pair(d, d_hat)
        want = mp_report(d, d_hat)
        worst = max(worst, max(abs(g - float(w)) for g, w in zip(got, want)))
    # module examples, exact
    examples_ok = (
        metrics.chebyshev(np.array([.3, .7]), np.array([.5, .5])) == pytest.approx(0.2, abs=1e-15)
        and metrics.clark(np.array([.5, .5]), np.array([.25, .75]))
            == pytest.approx(np.sqrt(1 / 9 + 1 / 25) / np.sqrt(2), abs=1e-15)
        and metrics.canberra(np.array([.5, .5]), np.array([.25, .75])) == pytest.approx(4 / 15, abs=1e-15)
        and metrics.kl_metric(np.array([.25, .75]), np.array([.75, .25]))
            == pytest.approx(0.5 * np.log(3), abs=1e-15)
        and metrics.cosine(np.array([.5, .5]), np.array([1.0, 0.0])) == pytest.approx(1 / np.sqrt(2), abs=1e-15)
        and metrics.intersection(np.array([.3, .7]), np.array([.5, .5])) == pytest.approx(0.8, abs=1e-15)
        and metrics.top1_accuracy(np.array([.5, .5]), np.array([.5, .5])) == 1.0
    )
    ok = worst < 1e-9 and examples_ok
    assert report("4 metrics vs arbitrary-precision oracle, 1000 pairs",
                  ok, f"max dev {worst:.1e}")


# --- criteria 5 and 6: training runs on the default planted set ------------

@pytest.fixture(scope="module")
def trained_runs():
    spec = datagen.GeneratorSpec()  # default desk-scale planted structure
    samples = datagen.generate(spec)
    train_set, eval_set = datagen.split(samples, 0.8, spec.seed)
    ev_feat = np.stack([s.features for s in eval_set])
    ev_d = np.stack([s.distribution for s in eval_set])
    runs = {"eval_feat": ev_feat, "eval_dists": ev_d, "t0": time.monotonic()}
    variants = {"full": {}, "no_memory": {"use_memory": False}, "ce": {"loss_mode": "ce"}}
    for name, kw in variants.items():
        runs[name] = []
        for seed in range(3):
            cfg = train.TrainConfig(lr=TRAIN_LR, epochs=50, seed=seed, **kw)
            init_params = model.init(
                train.model_dims(cfg, spec.feature_dim, spec.categories, spec.annotators),
                rng_stream(seed, "init"))
            initial_kl = train.heldout_kl_loss(init_params, ev_feat, ev_d)
            _, _, log = train.train(cfg, train_set, eval_set)
            best = min(log, key=lambda r: r["eval_l_kl"])
            runs[name].append({"initial_kl": initial_kl,
                               "final_kl": log[-1]["eval_l_kl"],
                               "metric_kl": best["eval"]["kl"]})
    runs["elapsed"] = time.monotonic() - runs["t0"]
    return runs


def test_criterion_5_training_efficacy(trained_runs):
    ratios = [r["final_kl"] / r["initial_kl"] for r in trained_runs["full"]]
    med = float(np.median(ratios))
    # runtime budget covers all criterion-5/6 training (the full-model runs
    # are a third of it)
    ok = med < 0.5 and trained_runs["elapsed"] < 300
    assert report("5 held-out loss halves after training, median of 3 seeds",
                  ok, f"median ratio {med:.3f}, all runs {trained_runs['elapsed']:.0f}s")


def test_criterion_6_ablation_direction(trained_runs):
    full = float(np.median([r["metric_kl"] for r in trained_runs["full"]]))
    no_mem = float(np.median([r["metric_kl"] for r in trained_runs["no_memory"]]))
    ce = float(np.median([r["metric_kl"] for r in trained_runs["ce"]]))
    ok_mem = full <= 1.05 * no_mem
    ok_ce = full <= 1.05 * ce
    report("6a full <= 1.05 x no-memory (best-checkpoint held-out KL, median of 3 seeds)",
           ok_mem, f"full {full:.4f} vs no-memory {no_mem:.4f}")
    report("6b full <= 1.05 x positional-CE (best-checkpoint held-out KL, median of 3 seeds)",
           ok_ce, f"full {full:.4f} vs ce {ce:.4f}")
    assert ok_mem and ok_ce


# --- criterion 7: matching invariance --------------------------------------

def test_criterion_7_matching_invariance():
    rng = np.random.default_rng(707)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        c = int(rng.integers(2, 9))
        probs = [rng.dirichlet(np.ones(c)) for _ in range(n)]
        labels = rng.integers(0, c, size=n).tolist()
        perm = rng.permutation(n)
        c1 = matching.hungarian(matching.build_cost_matrix(labels, probs)).total_cost
        c2 = matching.hungarian(
            matching.build_cost_matrix([labels[i] for i in perm], probs)).total_cost
        if c2 - c1 != 0.0:
            bad += 1
    assert report("7 label permutation changes minimal cost by exactly 0",
                  bad == 0, f"{bad} violations")


# --- criterion 8: pipeline reproducibility ---------------------------------

def run_pipeline(root):
    root.mkdir(exist_ok=True)
    data = root / "data.jsonl"
    out = root / "run"
    cmds = [
        ["gen-data", "--samples", "300", "--seed", "9", "--out", str(data)],
        ["train", "--data", str(data), "--out-dir", str(out),
         "--epochs", "3", "--lr", "0.01", "--seed", "9", "--split-seed", "9"],
        ["eval", "--checkpoint", str(out / "best.ckpt"), "--data", str(data),
         "--split", "test", "--split-seed", "9"],
    ]
    outputs = []
    for cmd in cmds:
        proc = subprocess.run([sys.executable, "-m", "crowdldl.cli"] + cmd,
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append(proc.stdout)
    return {"dataset": data.read_bytes(),
            "final": (out / "final.ckpt").read_bytes(),
            "best": (out / "best.ckpt").read_bytes(),
            "report": outputs[-1]}


def test_criterion_8_reproducibility(tmp_path):
    a = run_pipeline(tmp_path / "a")
    b = run_pipeline(tmp_path / "b")
    same = all(a[k] == b[k] for k in a)
    assert report("8 two identical-seed pipeline runs are bit-identical", same)


# --- criterion 9: K=0 equivalence ------------------------------------------

def test_criterion_9_k0_bypass_equivalence():
    dims = model.Dims(d1=16, d2=8, K=0, C=4, N=4)
    bad = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params = model.init(dims, rng_stream(seed, "init"))
        features = rng.normal(size=(1, dims.d1))
        labels = [sorted(rng.integers(0, dims.C, size=dims.N).tolist())]
        dists = np.stack([datagen.vote_distribution(labels[0], dims.C)])

        full_fwd = model.forward_batch(params, features)
        ref_fwd = reference_no_memory.forward_batch(params, features)
        if any(a["probs"].tobytes() != b["probs"].tobytes()
               for a, b in zip(full_fwd, ref_fwd)):
            bad += 1
            continue
        full = losses.total_loss(features, labels, dists, params)
        ref = reference_no_memory.total_loss(features, labels, dists, params)
        for gf, gr in zip(full.grads, ref.grads):
            if any(x.tobytes() != y.tobytes()
                   for (_, x), (_, y) in zip(gf.blocks(), gr.blocks())):
                bad += 1
                break
    assert report("9 K=0 bit-identical to memory-deleted implementation",
                  bad == 0, f"{bad}/100 inputs differ")
