"""The eight acceptance criteria, one test each.

Every test records a one-line verdict that is printed in the terminal
summary (``pytest tests/test_acceptance.py -v``) whether it passes or not.
"""
import hashlib
import json
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import ACCEPTANCE, random_case
from oracles import epbd_replay
from divprune.cli import main
from divprune.data import two_gaussians
from divprune.diversity import (
    RiskParams,
    critical_points,
    decompose,
    estimated_risk,
    interval_table,
    risk_first_derivative,
    risk_second_derivative,
    risk_third_derivative,
)
from divprune.evaluation import ExperimentConfig, cross_validate, friedman_ranks, paired_ttest
from divprune.learners import LearnerSpec, prediction_matrix, train_bagging
from divprune.pruning import PruneConfig, prune_epbd

# tolerances
IDENTITY_TOL = 1e-12
ROOT_TOL = 1e-6
FD_REL_TOL = 1e-4
ACC_DROP_PP = 2.0
BENCH_SECONDS = 600
IDENTITY_SECONDS = 5.0

REF = RiskParams(delta=1.0, epsilon=0.01, sample_size=200)


def record(n, name, ok, detail):
    ACCEPTANCE[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n} {name}: {detail}"
    print(ACCEPTANCE[n])
    return ok


def _cases(n_cases=1000, seed=20240601):
    # every fourth case votes with uniform weights so that ties occur
    rng = np.random.default_rng(seed)
    return [random_case(rng, uniform=(i % 4 == 0)) for i in range(n_cases)]


def test_1_decomposition_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for pm, w in _cases():
        prof = decompose(pm, w)
        worst = max(worst, abs(prof.g_bar - (prof.a_bar - prof.d_bar)))
    elapsed = time.perf_counter() - t0
    ok = worst < IDENTITY_TOL and elapsed < IDENTITY_SECONDS
    assert record(1, "decomposition identity", ok,
                  f"max |G-(A-D)| = {worst:.3e} over 1000 cases in {elapsed:.2f}s")


def test_2_margin_bar_identity():
    worst, n_checked, n_ties = 0.0, 0, 0
    for pm, w in _cases():
        prof = decompose(pm, w)
        ok = ~prof.ties
        lam = prof.per_instance_lambda[ok].astype(float)
        res = np.abs(prof.per_instance_bar_margin[ok] - (lam - 2 * prof.per_instance_div[ok]))
        if res.size:
            worst = max(worst, float(res.max()))
        n_checked += int(ok.sum())
        n_ties += prof.n_ties
    assert record(2, "margin-bar identity", worst < IDENTITY_TOL,
                  f"max residual {worst:.3e} over {n_checked} instances "
                  f"({n_ties} ties excluded)")


def test_3_critical_points():
    cp = critical_points(REF)
    # independent evaluation of the closed forms
    t = REF.delta / REF.noise_factor * math.sqrt(8 / REF.sample_size)
    closed = {
        "q1": REF.epsilon,
        "q2": 0.5 * (1 - t),
        "q3": 0.5 * (1 - REF.epsilon / REF.noise_factor),
        "q5": 0.5 * (1 - REF.delta / REF.noise_factor
                     * math.sqrt(8 / REF.sample_size * math.exp(2 / 3))),
        "q6": 0.5 * (1 - REF.delta / REF.noise_factor
                     * math.sqrt(8 / REF.sample_size * math.exp(7 / 6))),
    }
    printed = {"q1": 0.01, "q2": 0.397959, "q3": 0.494898, "q5": 0.357590, "q6": 0.317155}
    roots = {
        "q2": brentq(lambda d: risk_first_derivative(d, 1, REF), 0.36, 0.45, xtol=1e-14),
        "q5": brentq(lambda d: risk_second_derivative(d, 1, REF), 0.33, 0.39, xtol=1e-14),
        "q6": brentq(lambda d: risk_third_derivative(d, 1, REF), 0.25, 0.34, xtol=1e-14),
    }
    got = {k: getattr(cp, k) for k in closed}
    closed_ok = all(abs(got[k] - closed[k]) < 1e-15 for k in closed)
    roots_ok = all(abs(roots[k] - got[k]) < ROOT_TOL for k in roots)
    order_ok = cp.q1 < cp.q2 < cp.q3 and cp.q6 < cp.q5 < cp.q4 == cp.q2
    printed_off = {k: got[k] - v for k, v in printed.items() if abs(got[k] - v) >= ROOT_TOL}
    ok = closed_ok and roots_ok and order_ok
    detail = ", ".join(f"{k}={got[k]:.6f}" for k in ("q1", "q2", "q3", "q5", "q6"))
    detail += f"; roots agree to {max(abs(roots[k] - got[k]) for k in roots):.1e}"
    if printed_off:
        detail += "; printed reference value differs from its closed form for " + ", ".join(
            f"{k} ({printed[k]} vs {got[k]:.6f})" for k in printed_off)
    assert record(3, "critical points", ok, detail)


def test_4_derivative_consistency():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        lam = int(rng.choice([-1, 1]))
        d = lam * rng.uniform(0.02, 0.48)
        h = 1e-6
        d1 = risk_first_derivative(d, lam, REF)
        fd1 = (estimated_risk(d + h, lam, REF) - estimated_risk(d - h, lam, REF)) / (2 * h)
        d2 = risk_second_derivative(d, lam, REF)
        fd2 = (risk_first_derivative(d + h, lam, REF)
               - risk_first_derivative(d - h, lam, REF)) / (2 * h)
        worst = max(worst, abs(d1 - fd1) / (1 + abs(d1)), abs(d2 - fd2) / (1 + abs(d2)))
    mismatched = []
    for row in interval_table(critical_points(REF)):
        mid = 0.5 * (row.lower + row.upper)
        slope = risk_first_derivative(mid, 1 if mid > 0 else -1, REF)
        want = "increasing" if slope > 0 else "decreasing"
        if row.risk_trend != want:
            mismatched.append(row.label)
    ok = worst < FD_REL_TOL and not mismatched
    assert record(4, "derivative consistency", ok,
                  f"max relative FD gap {worst:.2e} at 20 points; "
                  f"trend mismatches in {mismatched or 'no'} interval(s) of 8")


def test_5_epbd_contract():
    d = two_gaussians(200, seed=7)
    cfg = PruneConfig("epbd", alpha=0.6, beta=1.0, epsilon=0.01)
    e = train_bagging(d, 11, "stump", seed=7)
    r = prune_epbd(e, d, cfg)
    problems = epbd_replay(prediction_matrix(e, d), r.kept_indices, r.trace, 0.6, 1.0)
    exp = ExperimentConfig((d,), (PruneConfig("none"), cfg), base=LearnerSpec("stump"),
                           size=11, folds=5, seed=7)
    table = cross_validate(exp)
    full, sub = table.cell(d.name, "none").mean, table.cell(d.name, "epbd").mean
    ok = r.size <= 7 and not problems and sub >= full - ACC_DROP_PP
    assert record(5, "EPBD contract", ok,
                  f"|H|={r.size} (kept {r.kept_indices}), replay issues {len(problems)}, "
                  f"5-fold accuracy EPBD {sub:.2f}% vs full {full:.2f}%")


def test_6_benchmark_direction(tmp_path, capsys):
    """Bare ``divprune bench`` run: every bundled dataset, default settings."""
    t0 = time.perf_counter()
    code = main(["bench", "--out", str(tmp_path / "b.csv"), "--report", str(tmp_path / "b.json")])
    capsys.readouterr()
    elapsed = time.perf_counter() - t0
    rep = json.loads((tmp_path / "b.json").read_text())
    ranks = rep["friedman"]["average_ranks"]
    n_data = len(rep["datasets"])
    ok = (code == 0 and n_data >= 6 and ranks["epbd"] < ranks["es"]
          and ranks["epbd"] < ranks["kp"] and elapsed < BENCH_SECONDS)
    listing = ", ".join(f"{m} {v:.3f}" for m, v in sorted(ranks.items(), key=lambda x: x[1]))
    assert record(6, "benchmark direction", ok,
                  f"average ranks over {n_data} datasets: {listing} ({elapsed:.0f}s)")


def test_7_statistics_oracles():
    t = paired_ttest([2, -1, 3, 0, 1], [0, 0, 0, 0, 0])
    t_ok = abs(t.t_stat - math.sqrt(2)) < 1e-4 and t.dof == 4 and t.outcome == "tie"
    r1 = friedman_ranks([[3, 2, 1], [1, 2, 3]]).avg_ranks.tolist()
    r2 = friedman_ranks([[5, 5, 1], [5, 5, 1]]).avg_ranks.tolist()
    rng = np.random.default_rng(7)
    sums_ok = True
    for _ in range(200):
        k = int(rng.integers(2, 8))
        fr = friedman_ranks(rng.integers(0, 5, size=(int(rng.integers(2, 8)), k)))
        sums_ok &= bool(np.allclose(fr.ranks.sum(axis=1), k * (k + 1) / 2))
    ok = t_ok and r1 == [2.0, 2.0, 2.0] and r2 == [1.5, 1.5, 3.0] and sums_ok
    assert record(7, "statistics oracles", ok,
                  f"t={t.t_stat:.4f} dof={t.dof} p={t.p_value:.3f} -> {t.outcome}; "
                  f"ranks {r1} and {r2}; row sums k(k+1)/2: {sums_ok}")


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_8_determinism(tmp_path, capsys):
    data = "synthetic:two_gaussians:150:1.5:11"
    commands = {
        "train": ["train", "--data", data, "--size", "9", "--seed", "5", "--out", "{d}/m.json"],
        "analyze": ["analyze", "--model", "{d}/m.json", "--data", data, "--out", "{d}/a.json"],
        "prune": ["prune", "--model", "{d}/m.json", "--data", data, "--out", "{d}/p.json"],
        "sweep": ["sweep", "--grid=-0.5:0.5:101", "--out", "{d}/s.csv"],
        "bench": ["bench", "--data", data, "--data", "bundled:iris_versicolor", "--size", "7",
                  "--out", "{d}/b.csv", "--report", "{d}/r.json"],
    }
    outputs = {"train": ["m.json"], "analyze": ["a.json"], "prune": ["p.json"],
               "sweep": ["s.csv"], "bench": ["b.csv", "r.json"]}
    digests = []
    for rep in range(2):
        d = tmp_path / f"run{rep}"
        d.mkdir()
        for name, argv in commands.items():
            assert main([a.replace("{d}", str(d)) for a in argv]) == 0
        digests.append({f: _sha(d / f) for fs in outputs.values() for f in fs})
    capsys.readouterr()
    # replay every manifest of the first run in place
    d0 = tmp_path / "run0"
    for fs in outputs.values():
        assert main(["replay", str(d0 / (fs[0] + ".manifest.json"))]) == 0
    capsys.readouterr()
    replayed = {f: _sha(d0 / f) for fs in outputs.values() for f in fs}
    same = digests[0] == digests[1] == replayed
    assert record(8, "determinism", same,
                  f"{len(digests[0])} output files byte-identical across 2 runs and a "
                  f"manifest replay: {same}")
