"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v`` (or ``python tests/test_acceptance.py``).
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cfx.cfe import CfeConfig, generate, pick_target
from cfx.cli import main as cli_main
from cfx.datasets import DataFormatError, parse_ucr_tsv, parse_uea_ts
from cfx.metrics import evaluate
from cfx.warp import brute_force_paths, cost_matrix, delannoy, dtw, soft_dtw, soft_dtw_grad, soft_min
from gradcheck import central_diff, rel_err

import test_autodiff as ta
import test_nn as tn
from test_cfe import composite_grad_error

N_EXPLAIN = 50


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# -- shared explanation runs ----------------------------------------------------

def spread_indices(n_test, n=N_EXPLAIN):
    return sorted(set(np.linspace(0, n_test - 1, n).round().astype(int).tolist()))


def explain_batch(ds, model, cfg):
    t0 = time.perf_counter()
    results = []
    for i in spread_indices(len(ds.y_test)):
        x = ds.X_test[i]
        results.append(generate(x, pick_target(x, model, "second"), model, ds.X_train, ds.y_train, cfg))
    report = evaluate(results, model, ds.X_train, ds.y_train, seed=0)
    return results, report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def cbf_run(cbf_desk, cbf_model):
    return explain_batch(cbf_desk, cbf_model[0], CfeConfig())


@pytest.fixture(scope="module")
def cbf_run_lam5(cbf_desk, cbf_model):
    return explain_batch(cbf_desk, cbf_model[0], CfeConfig(lam=5.0))


@pytest.fixture(scope="module")
def italy_run(italy, italy_model):
    return explain_batch(italy, italy_model[0], CfeConfig())


# -- 1. oracle equivalence --------------------------------------------------------

def _path_index_groups(m, n):
    # paths grouped by length, as (n_paths, L) arrays of flat cost-matrix indices
    groups = {}
    for p in brute_force_paths(m, n):
        groups.setdefault(len(p.steps), []).append([i * n + j for i, j in p.steps])
    return [np.array(g) for g in groups.values()]


def _enumerated_costs(C, groups):
    flat = C.ravel()
    out = []
    for idx in groups:
        total = flat[idx[:, 0]]
        for col in range(1, idx.shape[1]):
            total = total + flat[idx[:, col]]  # sequential, same order as the DP recursion
        out.append(total)
    return np.concatenate(out)


def test_criterion_01_oracle_equivalence(capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    n_pairs, worst_soft, hard_mismatch = 0, 0.0, 0
    for m in range(1, 7):
        for mp in range(1, 7):
            groups = _path_index_groups(m, mp)
            for _ in range(50):
                d = int(rng.integers(1, 4))
                X, Y = rng.normal(size=(m, d)), rng.normal(size=(mp, d))
                costs = _enumerated_costs(cost_matrix(X, Y), groups)
                hard_mismatch += dtw(X, Y)[0] != costs.min()
                gamma = float(rng.choice([0.1, 1.0]))
                worst_soft = max(worst_soft, abs(soft_dtw(X, Y, gamma)[0] - soft_min(costs, gamma)))
                n_pairs += 1
    elapsed = time.perf_counter() - t0
    ok = hard_mismatch == 0 and worst_soft <= 1e-9 and elapsed < 10
    verdict(capsys, 1, ok, f"{n_pairs} pairs, dtw mismatches {hard_mismatch}, "
                           f"max |soft - softmin| {worst_soft:.2e} (tol 1e-9), {elapsed:.2f}s (< 10s)")


# -- 2. gamma limit ---------------------------------------------------------------

def test_criterion_02_gamma_limit(capsys):
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    bound = math.log(delannoy(5, 5))
    violations = 0
    for _ in range(100):
        X, Y = rng.normal(size=(6, 1)), rng.normal(size=(6, 1))
        hard = dtw(X, Y)[0]
        for gamma in (1.0, 0.1, 0.01):
            gap = hard - soft_dtw(X, Y, gamma)[0]
            violations += not (0.0 <= gap <= gamma * bound)
    elapsed = time.perf_counter() - t0
    ok = delannoy(5, 5) == 1683 and violations == 0 and elapsed < 5
    verdict(capsys, 2, ok, f"Delannoy(5,5)={delannoy(5, 5)}, violations {violations}/300, {elapsed:.2f}s (< 5s)")


# -- 3. gradient suite ------------------------------------------------------------

def _soft_dtw_grad_error(seed):
    rng = np.random.default_rng(seed)
    m, n, d = rng.integers(2, 10), rng.integers(2, 10), rng.integers(1, 4)
    X, Y = rng.normal(size=(m, d)), rng.normal(size=(n, d))
    gamma = float(rng.choice([0.5, 1.0, 2.0]))
    _, ws = soft_dtw(X, Y, gamma)
    num = central_diff(lambda Z: soft_dtw(Z, Y, gamma)[0], X.copy(), range(X.size), 1e-5)
    return rel_err(soft_dtw_grad(ws, X, Y).ravel(), num).max()


def _op_error(name, seed):
    rng = np.random.default_rng(seed)
    if name == "conv1d":
        B, C, O, T = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5), rng.integers(3, 12)
        return ta.check_op(ta.ad.conv1d, [rng.normal(size=(B, C, T)), rng.normal(size=(O, C, 3)),
                                          rng.normal(size=O)], rng)
    if name in ("batchnorm-train", "batchnorm-infer"):
        C = int(rng.integers(1, 4))
        st = ta.BatchNormState(C)
        st.running_mean, st.running_var = rng.normal(size=C), rng.uniform(0.5, 2.0, size=C)
        training = name == "batchnorm-train"
        build = lambda x, g, b: ta.ad.batch_norm(x, g, b, st if not training else ta.BatchNormState(C),  # noqa: E731
                                                 training=training)
        return ta.check_op(build, [rng.normal(size=(4, C, 5)), rng.normal(size=C), rng.normal(size=C)], rng)
    if name == "linear":
        B, F, O = rng.integers(1, 5), rng.integers(1, 8), rng.integers(1, 5)
        return ta.check_op(ta.ad.linear, [rng.normal(size=(B, F)), rng.normal(size=(O, F)), rng.normal(size=O)], rng)
    if name == "relu":
        return ta.check_op(ta.ad.relu, [ta.away_from_zero(rng, (3, 4, 5))], rng)
    if name == "maxpool":
        x = rng.normal(size=(2, 3, 8))
        win = x.reshape(2, 3, 4, 2)
        win[..., 1] += np.where(np.abs(win[..., 0] - win[..., 1]) < 10 * ta.H, 0.1, 0.0)
        return ta.check_op(lambda t: ta.ad.max_pool1d(t, 2), [win.reshape(2, 3, 8)], rng)
    if name == "global-avg-pool":
        return ta.check_op(ta.ad.global_avg_pool, [rng.normal(size=(2, 3, int(rng.integers(1, 9))))], rng)
    if name == "softmax":
        return ta.check_op(ta.ad.softmax, [rng.normal(size=(3, int(rng.integers(2, 6))))], rng)
    if name == "cross-entropy":
        B, c = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        y = rng.integers(0, c, size=B)
        return ta.check_op(lambda z: ta.ad.cross_entropy(z, y), [rng.normal(size=(B, c))], rng)
    raise KeyError(name)


OPS = ("conv1d", "batchnorm-train", "batchnorm-infer", "linear", "relu", "maxpool", "global-avg-pool",
       "softmax", "cross-entropy")


def test_criterion_03_gradient_suite(capsys):
    t0 = time.perf_counter()
    worst = {"soft_dtw_grad": max(_soft_dtw_grad_error(s) for s in range(20))}
    for op in OPS:
        worst[op] = max(_op_error(op, s) for s in range(20))
    worst["classifier-input"] = max(tn.classifier_grad_error(s)[0] for s in range(20))
    composite = [composite_grad_error(s) for s in range(20)]
    worst["composite"] = max(e for e, _ in composite)
    elapsed = time.perf_counter() - t0
    bad = [k for k, v in worst.items() if v >= (1e-3 if k == "composite" else 1e-4)]
    ok = not bad and min(n for _, n in composite) > 0 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(capsys, 3, ok, f"20 instances each; max rel err: {detail}; failing {bad}; {elapsed:.1f}s (< 60s)")


# -- 4. classifier training -------------------------------------------------------

def test_criterion_04_cbf_training(capsys, cbf_desk, cbf_training):
    _, report, seconds = cbf_training
    shape_ok = cbf_desk.X_train.shape == (300, 64, 1) and cbf_desk.X_test.shape == (150, 64, 1)
    ok = shape_ok and report.test_accuracy >= 0.95 and seconds < 120
    verdict(capsys, 4, ok, f"CBF 300/150 T=64: test accuracy {report.test_accuracy:.4f} (>= 0.95), "
                           f"{report.epochs_run} epochs, {seconds:.1f}s (< 120s)")


# -- 5-8. explanation runs ----------------------------------------------------------

def test_criterion_05_validity(capsys, cbf_run, italy_run):
    parts, ok = [], True
    for name, (results, rep, secs) in (("CBF", cbf_run), ("ItalyPowerDemand", italy_run)):
        val = rep["all"]["validity"]
        ok &= len(results) == N_EXPLAIN and val >= 0.95 and secs < 300
        parts.append(f"{name} validity {val:.3f} over {len(results)} in {secs:.1f}s")
    verdict(capsys, 5, ok, "; ".join(parts) + " (>= 0.95, < 300s each)")


def test_criterion_06_plausibility_direction(capsys, cbf_run, italy_run):
    parts, ok = [], True
    for name, (_, rep, _) in (("CBF", cbf_run), ("ItalyPowerDemand", italy_run)):
        cf, orig = rep["all"]["dtw_plausibility"], rep["original_dtw_plausibility"]
        ok &= cf < orig
        parts.append(f"{name} counterfactual {cf:.4f} < original {orig:.4f}")
    verdict(capsys, 6, ok, "; ".join(parts))


def test_criterion_07_isolation_forest(capsys, cbf_run):
    frac = cbf_run[1]["all"]["iso_nominal_fraction"]
    verdict(capsys, 7, frac >= 0.90, f"CBF nominal fraction {frac:.3f} (>= 0.90)")


def test_criterion_08_tradeoff(capsys, cbf_run, cbf_run_lam5):
    a, b = cbf_run[1]["all"], cbf_run_lam5[1]["all"]
    dtw_ok = b["dtw_plausibility"] <= 1.05 * a["dtw_plausibility"]
    l2_ok = b["l2"] >= 0.95 * a["l2"]
    verdict(capsys, 8, dtw_ok and l2_ok,
            f"lambda 1 -> 5: DTW {a['dtw_plausibility']:.4f} -> {b['dtw_plausibility']:.4f} (<= +5%), "
            f"L2 {a['l2']:.3f} -> {b['l2']:.3f} (>= -5%)")


# -- 9. determinism ---------------------------------------------------------------

def _pipeline(root: Path):
    data, model = root / "data", root / "model.cfxm"
    steps = [
        ["generate-cbf", "--out", data, "--length", 32, "--per-class", 30, "--test-per-class", 4, "--seed", 9],
        ["train", "--data", data, "--out", model, "--seed", 9, "--epochs", 15],
        ["explain", "--model", model, "--data", data, "--out", root / "explain.json", "--series-out",
         root / "series", "--k", 3, "--iters", 30, "--limit", 6, "--spread", "--seed", 9],
        ["evaluate", "--model", model, "--data", data, "--results", root / "series", "--out",
         root / "metrics.json", "--seed", 9],
        ["plot-data", "--results", root / "series"],
    ]
    for argv in steps:
        code = cli_main([str(a) for a in argv])
        if code != 0:
            return f"{argv[0]} exited {code}"
    return None


def _snapshot(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_09_determinism(capsys, tmp_path):
    err = _pipeline(tmp_path)
    first = _snapshot(tmp_path)
    err = err or _pipeline(tmp_path)
    second = _snapshot(tmp_path)
    differing = sorted(k for k in first if first[k] != second.get(k)) + sorted(set(second) - set(first))
    ok = err is None and not differing and len(first) >= 30
    verdict(capsys, 9, ok, f"{len(first)} output files from generate-cbf/train/explain/evaluate/plot-data; "
                           f"differing {differing or 'none'}{'; ' + err if err else ''}")


# -- 10. parser fixtures ----------------------------------------------------------

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _expect_ok(parse, name, check):
    with open(FIXTURES / name, encoding="utf-8") as fh:
        return check(parse(fh))


def _expect_error(parse, name, fragment):
    try:
        with open(FIXTURES / name, encoding="utf-8") as fh:
            parse(fh)
    except DataFormatError as exc:
        return fragment in str(exc)
    return False


def test_criterion_10_parser_fixtures(capsys):
    def five(pairs):
        X = np.stack([s.values for s, _ in pairs])
        return X.shape == (5, 4, 1) and X[1, 3, 0] == 1e-3 and X[4, 1, 0] == 25.0 \
            and [lab.index for _, lab in pairs] == [0, 1, 0, 2, 1]

    def three(parsed):
        header, pairs = parsed
        X = np.stack([s.values for s, _ in pairs])
        return header.problem_name == "ToyThree" and X.shape == (3, 4, 3) and X[1, :, 2].tolist() == [
            10.5, -10.5, 0.01, 2.5] and [lab.name for _, lab in pairs] == ["up", "down", "up"]

    cases = {
        "five.tsv": _expect_ok(parse_ucr_tsv, "five.tsv", five),
        "three_dim.ts": _expect_ok(parse_uea_ts, "three_dim.ts", three),
        "ragged.tsv": _expect_error(parse_ucr_tsv, "ragged.tsv", "line 3"),
        "nonnumeric.tsv": _expect_error(parse_ucr_tsv, "nonnumeric.tsv", "line 2, column 3"),
        "missing_data.ts": _expect_error(parse_uea_ts, "missing_data.ts", "missing @data"),
        "unequal_dims.ts": _expect_error(parse_uea_ts, "unequal_dims.ts", "line 5: unequal dimension lengths"),
        "bad_label.ts": _expect_error(parse_uea_ts, "bad_label.ts", "line 6: label 'C' not declared"),
    }
    failed = [k for k, v in cases.items() if not v]
    verdict(capsys, 10, not failed, f"{len(cases)} fixtures ({len(cases) - 2} error cases); failing {failed or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
