"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The Monte Carlo criteria are marked ``slow``; deselect them with ``-m "not slow"``.
"""

import os
import time

import numpy as np
import pytest

from nsc_aipw.aipw import TargetFunctional
from nsc_aipw.oracle import (SCENARIOS, random_nsc_law, run_oracle_suite, true_functional,
                             verify_double_robustness)
from nsc_aipw.simgen import (BINARY_PRESETS, PRESET_TRUTHS, get_setting, run_experiment,
                             setting1, setting2)

SEED = 20240611
N = 5000


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for a criterion, then assert it."""

    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def _threads():
    return os.cpu_count() or 1


@pytest.mark.slow
def test_criterion_1_gauss1(verdict):
    truth = setting1().truth(3)
    t0 = time.perf_counter()
    res = run_experiment("gauss1", N, 200, SEED, threads=_threads())
    elapsed = time.perf_counter() - t0
    s = res.summary
    ok = (round(truth, 6) == 2.415593 and abs(s["bias"]) <= 3 * s["mc_se"]
          and elapsed <= 600 and s["n_ok"] == 200)
    verdict(1, ok, f"truth={truth:.8f} bias={s['bias']:.4f} 3*mcse={3 * s['mc_se']:.4f} "
                   f"n_ok={s['n_ok']}/200 time={elapsed:.0f}s")


def test_criterion_2_gauss2_truth(verdict):
    t0 = time.perf_counter()
    truth = setting2().truth(3)
    elapsed = time.perf_counter() - t0
    verdict(2, round(truth, 5) == 16.71512 and elapsed < 1.0,
            f"truth={truth:.8f} time={elapsed:.3f}s")


@pytest.mark.slow
def test_criterion_3_misspecification_pattern(verdict):
    t0 = time.perf_counter()
    bias = {m: run_experiment("gauss2", N, 500, SEED, misspec=m, threads=_threads()).summary["bias"]
            for m in ("outcome", "missingness", "none", "both")}
    elapsed = time.perf_counter() - t0
    small = all(abs(bias[m]) <= 0.25 for m in ("outcome", "missingness", "none"))
    ok = small and bias["both"] > 0.5 and elapsed <= 1800
    detail = " ".join(f"{m}={b:+.4f}" for m, b in bias.items())
    verdict(3, ok, f"{detail} (need |.|<=0.25 for first three, both>0.5) time={elapsed:.0f}s")


def test_criterion_4_identification(verdict):
    t0 = time.perf_counter()
    rows = run_oracle_suite(20, SEED, 5)
    elapsed = time.perf_counter() - t0
    nsc = [r for r in rows if r["law"].startswith("nsc")]
    ctrl = [r for r in rows if r["law"].startswith("self-censoring")]
    rec = max(r["value"] for r in nsc if r["check"] == "reconstruction")
    beta = max(r["value"] for r in nsc if r["check"] == "beta_reconstruction")
    neg = min(r["value"] for r in ctrl if r["check"] == "reconstruction")
    n_laws = len({r["law"] for r in nsc})
    n_ctrl = len({r["law"] for r in ctrl})
    ok = (n_laws >= 20 and n_ctrl == 5 and rec <= 1e-10 and beta <= 1e-10 and neg > 1e-3
          and elapsed <= 60)
    verdict(4, ok, f"laws={n_laws} max_reconstruction={rec:.2e} max_beta={beta:.2e} "
                   f"controls={n_ctrl} min_control={neg:.3e} time={elapsed:.1f}s")


def test_criterion_5_influence_functions(verdict):
    t0 = time.perf_counter()
    rows = [r for r in run_oracle_suite(20, SEED, 0) if r["law"].startswith("nsc")]
    elapsed = time.perf_counter() - t0
    phi = max(r["value"] for r in rows if r["check"] in ("E[phi_odds]", "E[phi_adj]"))
    u = max(r["value"] for r in rows if r["check"] == "E[U(theta)]")
    ok = phi <= 1e-10 and u <= 1e-12 and elapsed <= 60
    verdict(5, ok, f"max|E phi|={phi:.2e} max|E U(theta)|={u:.2e} time={elapsed:.1f}s")


def test_criterion_6_double_robustness(verdict):
    func = TargetFunctional.product((1, 2, 3))
    single, both = [], []
    for t in range(20):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(SEED, spawn_key=(t,))))
        law = random_nsc_law(rng, 3, 0 if t % 2 == 0 else 2)
        single += [abs(verify_double_robustness(law, func, sc)) for sc in SCENARIOS[:3]]
        both.append(abs(verify_double_robustness(law, func, "both-wrong")))
    ok = max(single) <= 1e-10 and min(both) >= 1e-3
    verdict(6, ok, f"max single-misspec={max(single):.2e} min both-wrong={min(both):.3e}")


@pytest.mark.slow
def test_criterion_7_sandwich_calibration(verdict):
    res = run_experiment("gauss2", N, 500, SEED, variance=True, threads=_threads())
    s = res.summary
    ratio = s["mean_se2"] / s["variance"]
    verdict(7, abs(ratio - 1) <= 0.25,
            f"mean SE^2={s['mean_se2']:.5f} MC var={s['variance']:.5f} ratio={ratio:.3f} "
            f"n_ok={s['n_ok']}/500")


def test_criterion_8_binary_reference_values(verdict):
    func = TargetFunctional.product((1, 2, 3))
    errs = {name: abs(true_functional(BINARY_PRESETS[name].to_law(), func) - PRESET_TRUTHS[name])
            for name in ("binary1", "binary2")}
    ok = max(errs.values()) <= 1e-14 and all(
        get_setting(name).truth == PRESET_TRUTHS[name] for name in errs)
    verdict(8, ok, "enumerated preset truths " + " ".join(
        f"{k}={PRESET_TRUTHS[k]:.10f} (err {v:.1e})" for k, v in errs.items()))
