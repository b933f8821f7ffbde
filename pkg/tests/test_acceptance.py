"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criteria 4-7 read the shared synthetic runs from ``acceptance_support`` (cached
on disk; the first uncached run of the whole set takes many hours on one core).
Criterion 8 runs only when ``DERCFR_IHDP_DIR`` points at a directory holding
``ihdp_npci_1-100.train.npz`` and ``ihdp_npci_1-100.test.npz``.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

import acceptance_support as runs
from conftest import rel_error
from test_data import resimulate_ate
from test_losses import brute_rbf
from dercfr.autodiff import Tape
from dercfr.data import SyntheticConfig, generate_synthetic, load_npz_benchmark
from dercfr.losses import KernelSpec, LossInputs, mmd
from dercfr.metrics import ate_error, att_error, pehe, policy_risk
from dercfr.model import build_model, forward_all
from dercfr.trainer import ABLATION_ROWS, PRESETS, Hyperparams, TrainConfig, compute_terms, evaluate_model, train

RESULTS = []
STEP = 1e-5


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# ----------------------------------------------------------------- 1. gradient suite

# The median bandwidth heuristic is held constant per batch, so the suite uses fixed bandwidths.
GRAD_CASES = [
    # (m, depth, binary outcome, kernel, contribution layers)
    (8, 1, True, KernelSpec("linear"), "all"),
    (5, 2, False, KernelSpec("rbf", 1.3), 2),
    (3, 3, True, KernelSpec("rbf", 0.8), "all"),
    (6, 4, False, KernelSpec("linear"), 3),
]


def _terms(model, X, inputs, kernel, layers, tape):
    out = forward_all(model, X, tape, training=True, factual_arms=inputs.idx)
    return compute_terms(model, out, inputs, model.omega(tape), tape, layers, kernel)


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    worst = 0.0
    for case, (m, depth, binary, kernel, layers) in enumerate(GRAD_CASES):
        rng = np.random.default_rng(100 + case)
        n = 12
        X = rng.normal(size=(n, m))
        t = np.array([0, 1] * (n // 2))
        y = rng.integers(0, 2, n).astype(float) if binary else rng.normal(size=n)
        hp = Hyperparams(d_R=depth, d_y=1, d_t=1, h_R=4, h_y=3, h_t=3, batch_norm=depth % 2 == 0,
                         rep_normalize=depth == 3, layers=layers)
        model = build_model(hp, m, t, binary, seed=case)
        model.rho.value[:, 0] += rng.normal(scale=0.3, size=n)
        inputs = LossInputs(t, y, binary)
        params = model.parameters()

        tape = Tape()
        terms = _terms(model, X, inputs, kernel, layers, tape)
        names = sorted(terms)
        analytic = {k: tape.gradients(terms[k], params) for k in names}
        for pi, p in enumerate(params):
            numeric = {k: np.zeros_like(p.value) for k in names}
            flat = p.value.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + STEP
                up = _terms(model, X, inputs, kernel, layers, None)
                flat[j] = orig - STEP
                down = _terms(model, X, inputs, kernel, layers, None)
                flat[j] = orig
                for k in names:
                    numeric[k].reshape(-1)[j] = (up[k].item() - down[k].item()) / (2 * STEP)
            for k in names:
                err = rel_error(analytic[k][pi], numeric[k])
                worst = max(worst, err)
                assert err <= 1e-4, f"case {case} term {k} parameter {p.name}: relative error {err:.2e}"
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-4 and elapsed < 60,
           f"worst relative error {worst:.2e} over {len(GRAD_CASES)} models, {elapsed:.1f}s")


# ----------------------------------------------------------------- 2. mmd oracle

def test_criterion_2_rbf_mmd_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        na = int(rng.integers(1, n))
        d = int(rng.integers(1, 5))
        a, b = rng.normal(size=(na, d)), rng.normal(loc=0.5, size=(n - na, d))
        wa, wb = rng.uniform(0.1, 2.0, na), rng.uniform(0.1, 2.0, n - na)
        s = float(rng.uniform(0.3, 3.0))
        got = mmd(a, b, wa.reshape(-1, 1), wb.reshape(-1, 1), KernelSpec("rbf", s)).item()
        worst = max(worst, abs(got - brute_rbf(a, b, wa, wb, s)))
    elapsed = time.perf_counter() - start
    record(2, worst <= 1e-10 and elapsed < 10, f"max deviation {worst:.1e} over 200 cases, {elapsed:.1f}s")


# ----------------------------------------------------------------- 3. generator statistics

def test_criterion_3_generator_statistics():
    start = time.perf_counter()
    ds = generate_synthetic(SyntheticConfig(8, 8, 8, 2, n=100_000, seed=3))
    frac = float(ds.t.mean())
    binary = all(set(np.unique(y)) <= {0.0, 1.0} for y in (ds.y0, ds.y1, ds.yf))
    gap = abs(float(np.mean(ds.y1 - ds.y0)) - resimulate_ate(ds.meta, 100_000, seed=33))
    elapsed = time.perf_counter() - start
    ok = 0.45 <= frac <= 0.55 and binary and gap <= 0.01 and elapsed < 30
    record(3, ok, f"treated fraction {frac:.4f}, binary {binary}, ATE gap {gap:.4f}, {elapsed:.1f}s")


# ----------------------------------------------------------------- 4-7. synthetic training runs

@pytest.mark.slow
def test_criterion_4_identification():
    ident = runs.run_synthetic(0)["identification"]
    ratios = {}
    for f in "ICA":
        s = ident[f]
        ratios[f] = np.inf if s["other_mean"] == 0 else s["true_mean"] / s["other_mean"]
    ok = all(r >= 3.0 for r in ratios.values())
    record(4, ok, "true/other contribution ratio " + ", ".join(f"{f} {r:.2f}" for f, r in ratios.items()))


@pytest.mark.slow
def test_criterion_5_synthetic_pehe():
    recs = [runs.run_synthetic(r) for r in range(runs.N_REPLICATIONS)]
    within = np.array([r["metrics"]["within"]["pehe"] for r in recs])
    out = np.array([r["metrics"]["out"]["pehe"] for r in recs])
    ok = within.mean() <= 0.40 and out.mean() <= 0.50
    record(5, ok, f"within PEHE {within.mean():.3f} +- {within.std():.3f}, "
                  f"out PEHE {out.mean():.3f} +- {out.std():.3f} over {len(recs)} replications")


@pytest.mark.slow
def test_criterion_6_ablation_ordering():
    means = {}
    for name, dropped in ABLATION_ROWS:
        vals = [runs.run_synthetic(r, dropped)["metrics"]["within"]["pehe"]
                for r in range(runs.N_ABLATION_REPLICATIONS)]
        means[name] = float(np.mean(vals))
    full = means.pop("full")
    ok = all(full <= v for v in means.values())
    record(6, ok, f"full {full:.3f} vs " + ", ".join(f"{k} {v:.3f}" for k, v in means.items()))


@pytest.mark.slow
def test_criterion_7_balancing():
    rec = runs.run_synthetic(0)
    ratio = rec["mmd_c_final_weighted"] / rec["mmd_c_init_uniform"]
    record(7, ratio <= 0.10, f"weighted/initial C(X) MMD ratio {ratio:.3f} "
                             f"({rec['mmd_c_final_weighted']:.3e} / {rec['mmd_c_init_uniform']:.3e})")


# ----------------------------------------------------------------- 8. ihdp (data-gated)

IHDP_DIR = os.environ.get("DERCFR_IHDP_DIR")


@pytest.mark.slow
@pytest.mark.skipif(not IHDP_DIR or not (Path(IHDP_DIR) / "ihdp_npci_1-100.train.npz").exists(),
                    reason="IHDP benchmark files not supplied (set DERCFR_IHDP_DIR)")
def test_criterion_8_ihdp():
    root = Path(IHDP_DIR)
    within, out = [], []
    for r in range(100):
        full = load_npz_benchmark(root / "ihdp_npci_1-100.train.npz", realization=r)
        test = load_npz_benchmark(root / "ihdp_npci_1-100.test.npz", realization=r)
        perm = np.random.default_rng(r).permutation(full.n)
        n_valid = int(0.3 * full.n)
        parts = {"train": full.subset(np.sort(perm[n_valid:])), "valid": full.subset(np.sort(perm[:n_valid])),
                 "test": test}
        res = train(parts["train"], parts["valid"], PRESETS["ihdp"], TrainConfig(seed=r))
        reports = evaluate_model(res.model, parts)
        within.append(reports["within"].pehe)
        out.append(reports["out"].pehe)
    ok = np.mean(within) <= 0.60 and np.mean(out) <= 0.70
    record(8, ok, f"within PEHE {np.mean(within):.3f}, out PEHE {np.mean(out):.3f} over 100 realizations")


# ----------------------------------------------------------------- 9. metrics

def test_criterion_9_metrics():
    exact = [
        pehe([1, 2], [0, 0], [1, 2], [0, 0]) == 0.0,
        pehe([0, 0], [0, 0], [1, -1], [0, 0]) == 1.0,
        ate_error([1, 2], [0, 0], [1, 2], [0, 0]) == 0.0,
        ate_error([2, 0], [0, 0], [1, 1], [0, 0]) == 0.0,
        abs(ate_error([1.3, 2.3], [0, 0], [1, 2], [0, 0]) - 0.3) <= 1e-15,
        policy_risk([1, 0], [0, 1], [1, 1], [1, 0]) == 0.0,
        policy_risk([1, 0], [0, 1], [0, 0], [1, 0]) == 1.0,
        policy_risk([1], [0], [1], [1]) == 0.0,
        abs(att_error([0.3] * 4, [0] * 4, [1.0, 0.4, 0.5, 0.3], [1, 1, 0, 0])) <= 1e-15,
    ]
    rng = np.random.default_rng(9)
    bounded = 0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        rct = rng.integers(0, 2, n)
        rct[rng.integers(n)] = 1
        risk = policy_risk(rng.normal(size=n), rng.normal(size=n), rng.integers(0, 2, n).astype(float),
                           rng.integers(0, 2, n), rct)
        bounded += 0.0 <= risk <= 1.0
    record(9, all(exact) and bounded == 1000,
           f"{sum(exact)}/{len(exact)} worked examples exact, {bounded}/1000 policy risks in [0, 1]")
