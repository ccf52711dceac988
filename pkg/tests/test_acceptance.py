"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (with the measured numbers and wall
time) that is printed at the end of the pytest run.
"""

import json
import math
import time

import numpy as np
from scipy import integrate
from scipy.special import ellipkm1

from cantorharm.calibrate import delta_table, run_construction
from cantorharm.cli import main
from cantorharm.core import GeneratorSpec, Level
from cantorharm.feasibility import bound_delta2, bound_delta3
from cantorharm.kernels import ring_kernel
from cantorharm.potential import hier_potential_profile, potential_profile
from cantorharm.verify import (
    green_ratio_sweep,
    measure_comparison,
    reentry_density,
    ring_estimate,
    wos_sample,
)

from conftest import longdouble_points

A, R = 2.217, 0.0623


def record(log, number, checks, detail, elapsed, limit):
    ok = all(checks.values()) and elapsed <= limit
    failed = [k for k, v in checks.items() if not v]
    if elapsed > limit:
        failed.append(f"runtime {elapsed:.1f}s > {limit:.0f}s")
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f}s) {detail}"
    if failed:
        line += f" failed: {', '.join(failed)}"
    log.append(line)
    print(line)
    assert ok, line


def brute_oscillation(params, n, chunk=256):
    """osc(g_n) from an extended-precision double loop over all pairs."""
    pts = longdouble_points(params, n)
    w = np.longdouble(params.spec.size) ** -n
    g = np.empty(pts.size, dtype=np.longdouble)
    for s in range(0, pts.size, chunk):
        d = np.abs(pts[s : s + chunk, None] - pts[None, :])
        d[np.arange(d.shape[0]), np.arange(s, s + d.shape[0])] = 1
        g[s : s + chunk] = np.log(d).sum(1) * w
    return float(g.max() - g.min())


def test_criterion_01_default_point(acceptance_log, capsys):
    t0 = time.perf_counter()
    code = main(["bounds", "--a", str(A), "--r", str(R)])
    rep = json.loads(capsys.readouterr().out)
    elapsed = time.perf_counter() - t0
    total = rep["B2"] + rep["B3"]
    checks = {
        "exit 0": code == 0,
        "delta in [0.2496, 0.2498]": 0.2496 <= rep["delta"] <= 0.2498,
        "window_ok": rep["window_ok"],
        "B2+B3 <= ln(a)/2": total <= math.log(A) / 2,
    }
    detail = (f"delta={rep['delta']:.6f} B2+B3={total:.6f} ln(a)/2={math.log(A) / 2:.6f} "
              f"margin vs ln(a)/4={rep['margin']:+.6f}")
    record(acceptance_log, 1, checks, detail, elapsed, 1.0)


def test_criterion_02_roots_point(acceptance_log, capsys):
    t0 = time.perf_counter()
    code = main(["bounds", "--alphabet", "roots:4", "--a", "2.63", "--r", "0.033"])
    rep = json.loads(capsys.readouterr().out)
    elapsed = time.perf_counter() - t0
    checks = {"exit 0": code == 0, "delta in [0.406, 0.407]": 0.406 <= rep["delta"] <= 0.407}
    record(acceptance_log, 2, checks, f"delta={rep['delta']:.6f}", elapsed, 1.0)


def test_criterion_03_calibration(acceptance_log):
    t0 = time.perf_counter()
    run = run_construction(GeneratorSpec(), 12, method="naive")
    elapsed = time.perf_counter() - t0
    rows = run.trace.rows
    coeffs = np.concatenate([run.params.coefficients(k) for k in range(1, 12)])
    worst = max(r.oscillation / (2.0**-r.n * math.log(A) / 2) for r in rows[1:])
    checks = {
        "12 generations": len(rows) == 12,
        "a_k in [1, 2.217]": bool(np.all((coeffs >= 1) & (coeffs <= A))),
        "osc_n <= 2^-n ln(a)/2": all(r.oscillation <= 2.0**-r.n * math.log(A) / 2 for r in rows),
    }
    detail = f"max osc/budget={worst:.4f} final normalized osc={rows[-1].osc_normalized:.5f}"
    record(acceptance_log, 3, checks, detail, elapsed, 300.0)


def test_criterion_04_control_contrast(acceptance_log, default_run):
    t0 = time.perf_counter()
    control = run_construction(GeneratorSpec(), 12, calibrate=False)
    norm = np.array([2.0**n * brute_oscillation(control.params, n) for n in range(4, 13)])
    calibrated = 2.0**12 * brute_oscillation(default_run.params, 12)
    elapsed = time.perf_counter() - t0
    checks = {
        "not monotone to 0": not bool(np.all(np.diff(norm) < 0)) and norm[-1] > 0.1 * norm[0],
        "ratio >= 10": norm[-1] >= 10 * calibrated,
        "brute agrees with trace": abs(norm[-1] - control.trace.rows[-1].osc_normalized) <= 1e-6 * norm[-1],
    }
    detail = f"control 2^n osc n=4..12: {np.round(norm, 3).tolist()} calibrated n=12: {calibrated:.5f}"
    record(acceptance_log, 4, checks, detail, elapsed, 300.0)


def test_criterion_05_decomposition(acceptance_log, default_run):
    t0 = time.perf_counter()
    resid, sup = 0.0, 0.0
    for n in range(2, 11):
        tab = delta_table(Level(default_run.params, n - 1), Level(default_run.params, n))
        resid = max(resid, float(np.abs(tab.residual).max()))
        if n <= 8:
            sup = max(sup, float(np.max(np.abs(tab.delta2) + np.abs(tab.delta3))))
    elapsed = time.perf_counter() - t0
    bound = bound_delta2(A, R) + bound_delta3(A, R)
    checks = {"residual <= 1e-10": resid <= 1e-10, "sup <= B2+B3": sup <= bound}
    detail = f"max residual={resid:.2e} sup(|D2|+|D3|)={sup:.5f} B2+B3={bound:.5f}"
    record(acceptance_log, 5, checks, detail, elapsed, 60.0)


def test_criterion_06_ring_estimate(acceptance_log, default_run):
    t0 = time.perf_counter()
    est = ring_estimate([Level(default_run.params, n) for n in range(4, 11)], anchors=8, angles=8)
    elapsed = time.perf_counter() - t0
    checks = {"64 points per n": est.samples == 64, "spread < 1.5": est.spread < 1.5}
    detail = f"C_n={np.round(est.constants, 4).tolist()} max/min={est.spread:.4f}"
    record(acceptance_log, 6, checks, detail, elapsed, 60.0)


def test_criterion_07_green_ratio(acceptance_log, default_run):
    t0 = time.perf_counter()
    sweep = green_ratio_sweep(default_run.level, 2.0 ** -np.arange(2, 11), samples=32, seed=0)
    elapsed = time.perf_counter() - t0
    checks = {"G > 0": sweep.positive, "max/min <= 100": sweep.global_ratio <= 100}
    detail = f"global max/min={sweep.global_ratio:.4f} over {sweep.scales.size} scales x 32 samples"
    record(acceptance_log, 7, checks, detail, elapsed, 120.0)


def test_criterion_08_walk_on_spheres(acceptance_log, default_run):
    t0 = time.perf_counter()
    m, walks, seed = 6, 10**5, 11
    control = run_construction(GeneratorSpec(), m, calibrate=False)
    cal = wos_sample((0, 3), Level(default_run.params, m), walks=walks, depth=3, seed=seed)
    ctl = wos_sample((0, 3), control.level, walks=walks, depth=3, seed=seed)
    left, right = ctl.counts_at(1)
    se = math.sqrt((left + right) * 0.25)
    norm, _ = integrate.quad(reentry_density, -np.pi, np.pi, args=(0.3 + 3.1j, 2.9), epsabs=1e-14, limit=200)
    band_cal = measure_comparison(cal, 3).band_ratio
    band_ctl = measure_comparison(ctl, 3).band_ratio
    censored = max(cal.censored, ctl.censored) / walks
    elapsed = time.perf_counter() - t0
    checks = {
        "control depth-1 within 3 SE": abs(left - right) / 2 <= 3 * se,
        "density normalized to 1e-10": abs(norm - 1) <= 1e-10,
        "calibrated band <= control band": band_cal <= band_ctl,
        "censored < 1%": censored < 0.01,
    }
    detail = (f"control L/R={left}/{right} band calibrated={band_cal:.4f} control={band_ctl:.4f} "
              f"censored={censored:.4f}")
    record(acceptance_log, 8, checks, detail, elapsed, 600.0)


def test_criterion_09_ring_kernel(acceptance_log):
    t0 = time.perf_counter()
    t = np.linspace(0, 3, 61)
    axis = max(float(np.max(np.abs(ring_kernel(t, 0.0, n) - (1 + t * t) ** (-(n - 2) / 2)))) for n in (3, 4, 5))
    tt = np.geomspace(1e-6, 10, 100)
    worst = 0.0
    for Rr in (0.3, 1.0, 2.5):
        s = tt * tt + (1 + Rr) ** 2
        ref = 2 / np.pi * ellipkm1((tt * tt + (1 - Rr) ** 2) / s) / np.sqrt(s)
        worst = max(worst, float(np.max(np.abs(ring_kernel(tt, Rr) - ref) / np.maximum(1, ref))))
    grid = ring_kernel(0.05 * np.arange(1, 101), 1.0)
    spec = GeneratorSpec("ring:3", R, 2.5)
    run = run_construction(spec, 8)
    elapsed = time.perf_counter() - t0
    checks = {
        "axis 1e-10": axis <= 1e-10,
        "elliptic 1e-8": worst <= 1e-8,
        "strictly decreasing": bool(np.all(np.diff(grid) < 0)),
        "ring calibration n=8 within budget": len(run.trace.rows) == 8 and run.trace.all_within_budget,
    }
    detail = f"axis err={axis:.1e} elliptic err={worst:.1e} final osc/budget={run.trace.rows[-1].oscillation / run.trace.rows[-1].budget:.4f}"
    record(acceptance_log, 9, checks, detail, elapsed, 300.0)


def test_criterion_10_hierarchical(acceptance_log, default_run):
    t0 = time.perf_counter()
    excess = -math.inf
    for n in range(2, 11):
        lev = Level(default_run.params, n)
        naive = potential_profile(lev)
        hier = hier_potential_profile(lev, err_budget=1e-9)
        excess = max(excess, float(np.max(np.abs(hier.values - naive.values) - hier.err_bound - naive.err_bound)))
    run = run_construction(GeneratorSpec(max_generation=15), 15, method="hier", err_budget=1e-9)
    elapsed = time.perf_counter() - t0
    rows = run.trace.rows
    checks = {
        "hier within certified bound": excess <= 0,
        "n=15 hier run within reduced budget": len(rows) == 15 and run.trace.all_within_budget,
    }
    worst = max(r.oscillation / (r.budget - 2 * r.max_err) for r in rows[1:])
    detail = f"max(dev - bound)={excess:.2e} n=15 max osc/(budget - 2 err)={worst:.4f}"
    record(acceptance_log, 10, checks, detail, elapsed, 900.0)
