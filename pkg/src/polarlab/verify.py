"""Reduced-scale self checks and the discrepancy report used by ``polarlab verify``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ballchain as bc
from . import geom, harness, quad, rearrange


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def _random_grid(rng, d, m, H=1.0, levels=None):
    vals = rng.random((m,) * d)
    if levels is not None:
        vals = np.floor(vals * levels) / levels
    # keep the support inside the unit ball
    f = rearrange.GridFunction(d, H, m, vals)
    mask = np.linalg.norm(f.centers(), axis=1) < 0.9 * H
    return f.with_values(np.where(mask, f.values.ravel(), 0.0))


def check_geom(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    flips = 0
    for d in (1, 2, 3, 5):
        for _ in range(50):
            r = geom.sample_reflection(1.0, d, rng)
            x = rng.normal(size=(20, d))
            y = r(x)
            worst = max(worst, float(np.abs(r(y) - x).max()))
            dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
            dy = np.linalg.norm(y[:, None] - y[None], axis=-1)
            worst = max(worst, float(np.abs(dx - dy).max()))
            s0, s1 = geom.classify_many(r, x), geom.classify_many(r, y)
            flips += int(np.sum((s0 != 0) & (s0 != -s1)))
    ok = worst < 1e-12 and flips == 0
    return CheckResult("geom involution/isometry/side exchange", ok,
                       f"max error {worst:.2e}, side mismatches {flips}")


def check_threshold_commutation(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    mono = 0
    for d, m in ((1, 64), (2, 24), (3, 10)):
        f = _random_grid(rng, d, m, levels=8)
        g = f.with_values(np.minimum(f.values, 0.5 * (f.values + rng.random(f.values.shape))))
        for _ in range(10):
            r = geom.sample_reflection(1.0, d, rng)
            fp = rearrange.polarize(f, r)
            for t in (0.0, 0.25, 0.5, 0.875):
                lhs = fp.values > t
                rhs = rearrange.polarize(f.with_values((f.values > t).astype(float)), r).values > 0
                bad += int(np.sum(lhs != rhs))
            gp = rearrange.polarize(g, r)
            mono += int(np.sum(gp.values > fp.values + 1e-15))
    return CheckResult("threshold commutation and monotonicity", bad == 0 and mono == 0,
                       f"threshold mismatches {bad}, order violations {mono}")


def check_schwarz(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for d, m in ((1, 50), (2, 20), (3, 8)):
        f = _random_grid(rng, d, m)
        s = rearrange.schwarz(f)
        bad += int(rearrange.schwarz(s) != s)
        bad += int(not np.array_equal(np.sort(s.values.ravel()), np.sort(f.values.ravel())))
        bad += int(not math.isclose(s.mass, f.mass, rel_tol=1e-12))
    return CheckResult("Schwarz idempotence and equimeasurability", bad == 0, f"failures {bad}")


def check_determinism(seed: int) -> CheckResult:
    cfg1 = harness.fixture_config("disk-d2", m=32, n_max=10, trials=300, seed=seed, threads=1)
    cfg2 = harness.fixture_config("disk-d2", m=32, n_max=10, trials=300, seed=seed, threads=3)
    f = harness.build_fixture("disk-d2", cfg1)
    a, b = harness.estimate_zn(f, cfg1), harness.estimate_zn(f, cfg2)
    s1 = bc.simulate_chain([0.3, 0.1], 0.1, 0.5, 20, 9000, seed, K=2, threads=1)
    s2 = bc.simulate_chain([0.3, 0.1], 0.1, 0.5, 20, 9000, seed, K=2, threads=4)
    ok = np.array_equal(a.z, b.z) and np.array_equal(s1.moments, s2.moments)
    return CheckResult("seeded runs identical across thread counts", ok,
                       "harness and ball chain compared bitwise")


def check_closed_forms(seed: int) -> CheckResult:
    errs = {
        "gamma_1": abs(quad.gamma_const(1) - 1.0),
        "eta_1": abs(quad.eta(1) - 1.0),
        "b_1": abs(quad.b_const(1) - 0.5),
        "eta_2 closed": abs(quad.eta(2) - quad.eta_closed_form(2)),
        "eta_3 closed": abs(quad.eta(3) - quad.eta_closed_form(3)),
        "c_k d=1": max(abs(bc.coefficient(k, 1, 0.5) - k / (k + 1)) for k in range(1, 7)),
        "2L d eta_d at d=1": abs(2 * 0.5 * quad.eta(1) - 1.0),
    }
    worst = max(errs, key=errs.get)
    return CheckResult("closed-form constants", errs[worst] < 1e-10,
                       f"largest error {errs[worst]:.1e} ({worst})")


def check_mc_constants(seed: int, samples: int) -> CheckResult:
    zs = []
    for d in (2, 3):
        for name, q, (m, se) in (
            ("eta", quad.eta(d), quad.eta_mc(d, samples, seed)),
            ("gamma", quad.gamma_const(d), quad.gamma_mc(d, samples, seed + 1)),
            ("c_2", bc.coefficient(2, d, 1.0), quad.coefficient_mc(2, d, 1.0, samples, seed + 2)),
        ):
            zs.append((f"{name}_{d}", (m - q) / se))
    worst = max(zs, key=lambda e: abs(e[1]))
    return CheckResult("quadrature vs Monte Carlo constants", abs(worst[1]) < 3,
                       f"worst z-score {worst[1]:+.2f} ({worst[0]}), {samples} samples")


def check_chain_d1(seed: int, trials: int) -> CheckResult:
    L, z0, n = 0.5, 0.3, 50
    st = bc.simulate_chain([z0], 0.1, L, n, trials, seed, K=1)
    zs = [(st.mean(k) - bc.projected_mean_d1(z0, L, k)) / st.mean_stderr(k)
          for k in (1, 5, 20, 50)]
    worst = max(zs, key=abs)
    return CheckResult("one-dimensional chain mean vs exact law", abs(worst) < 3,
                       f"worst z-score {worst:+.2f}, {trials} trials")


def check_exact_d2(seed: int, trials: int) -> CheckResult:
    L, z0, n = 0.5, 0.3, 10
    table = bc.CoefficientTable.build(2, L, n + 1)
    st = bc.simulate_chain([z0, 0.0], 0.1, L, n, trials, seed, K=1, keep_paths=False)
    zs = [(st.mean(k) - bc.zn_exact(z0, 2, L, k, table=table)) / st.mean_stderr(k)
          for k in range(1, n + 1)]
    worst = max(zs, key=abs)
    return CheckResult("exact moment series vs simulation (d=2)", abs(worst) < 3,
                       f"worst z-score {worst:+.2f}, n <= {n}")


def check_hausdorff(seed: int) -> CheckResult:
    r1 = bc.hausdorff_sign_check(bc.CoefficientTable.build(1, 0.5, 16), 8, 8)
    r2 = bc.hausdorff_sign_check(bc.CoefficientTable.build(2, 0.5, 16), 8, 8)
    return CheckResult("alternating-difference signs", r1.ok and r2.ok,
                       f"d=1 min {float(r1.worst[2]):.3e}, d=2 min {r2.worst[2]:.3e}")


def check_drop(seed: int, trials: int) -> CheckResult:
    f = rearrange.indicator_interval(4.0, 64, 2.0, 3.0)
    cfg = harness.ExperimentConfig(d=1, L=4.0, H=4.0, m=64, trials=trials, seed=seed)
    mc, se = harness.one_step_drop_mc(f, 0.5, cfg)
    q = quad.drop_double_integral(f, 0.5, 4.0)
    z = (mc - q) / se
    return CheckResult("one-step drop vs double integral (d=1)", abs(z) < 3 and abs(q - 0.125) < 1e-12,
                       f"MC {mc:.5f} +- {se:.5f}, integral {q:.6f}")


def check_harness_d1(seed: int, trials: int, n_max: int) -> CheckResult:
    cfg = harness.fixture_config("interval-d1", m=128, n_max=n_max, trials=trials, seed=seed)
    f = harness.build_fixture("interval-d1", cfg)
    v = harness.check_bounds(harness.estimate_zn(f, cfg), f, cfg)
    return CheckResult("grid bounds, interval fixture", v.ok,
                       f"tail max c_n {v.tail_max_c:.3f} <= {v.limsup_allowed:.3f}")


def check_harness_d2(seed: int, trials: int, n_max: int) -> CheckResult:
    cfg = harness.fixture_config("disk-d2", m=64, n_max=n_max, trials=trials, seed=seed)
    f = harness.build_fixture("disk-d2", cfg)
    v = harness.check_bounds(harness.estimate_zn(f, cfg), f, cfg)
    return CheckResult("grid bounds, offset disk fixture", v.ok,
                       f"tail max c_n {v.tail_max_c:.3f} <= {v.limsup_allowed:.3f}")


def check_exp_limit(seed: int, trials: int) -> CheckResult:
    ks = bc.exponential_limit_test(0.5, 0.3, 300, trials, seed)
    return CheckResult("exponential limit (d=1)", ks < 0.02, f"KS {ks:.4f} at n=300, {trials} trials")


def domination_excesses(d: int, L: float, z0: float, n: int, trials: int, seed: int) -> dict:
    x0 = np.zeros(d)
    x0[0] = z0
    ball = bc.simulate_chain(x0, 0.5 * (L - z0), L, n, trials, seed, K=1)
    proj = bc.projected_chain(x0, L, n, trials, seed, K=1)
    out = {"proj": bc.domination_excess(ball.final, proj.final)}
    for variant in ("derived", "literal"):
        g = bc.burchard_gamma(d, L, variant)
        os_ = bc.order_statistic_chain(min(z0, g), g, d, n, trials, seed + 1, K=1)
        out[variant] = bc.domination_excess(ball.final, os_.final)
    return out


def check_domination(seed: int, trials: int) -> CheckResult:
    ex = domination_excesses(2, 0.5, 0.3, 50, trials, seed)
    band = 2 * bc.dkw_epsilon(trials, 0.01)
    ok = ex["proj"] <= band and ex["derived"] <= band
    return CheckResult("stochastic domination (d=2)", ok,
                       f"excess proj {ex['proj']:.4f}, order-statistic {ex['derived']:.4f}, band {band:.4f}")


def run_checks(seed: int = 0, quick: bool = False,
               progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    plan = [
        lambda: check_geom(seed),
        lambda: check_threshold_commutation(seed),
        lambda: check_schwarz(seed),
        lambda: check_closed_forms(seed),
        lambda: check_hausdorff(seed),
        lambda: check_chain_d1(seed, 20000 if quick else 100000),
        lambda: check_drop(seed, 20000 if quick else 100000),
        lambda: check_determinism(seed),
        lambda: check_mc_constants(seed, 10**5 if quick else 10**6),
    ]
    if not quick:
        plan += [
            lambda: check_exact_d2(seed, 50000),
            lambda: check_exp_limit(seed, 50000),
            lambda: check_domination(seed, 10000),
            lambda: check_harness_d1(seed, 2000, 100),
            lambda: check_harness_d2(seed, 300, 60),
        ]
    results = []
    for fn in plan:
        t0 = time.perf_counter()
        res = fn()
        res.seconds = time.perf_counter() - t0
        results.append(res)
        if progress is not None:
            progress(res)
    return results


# ---------------------------------------------------------------------------
# discrepancy report


def grid_symdiff(r: float, s: float, m: int = 2048) -> float:
    """Cell count of B_r sym-diff (s e_1 + B_r) in the plane."""
    H = r + s + 0.1
    h = 2 * H / m
    axis = -H + (np.arange(m) + 0.5) * h
    x, y = np.meshgrid(axis, axis, indexing="ij")
    a = x * x + y * y < r * r
    b = (x - s) ** 2 + y * y < r * r
    return float(np.sum(a ^ b)) * h * h


def _md_table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(rows_i) + " |" for rows_i in rows]
    return out


def discrepancy_report(seed: int = 0, trials: int = 10000) -> str:
    lines = ["# Discrepancy report", "",
             "Numerical evidence for each place where a displayed formula and the",
             "computed quantity disagree. Each section gives the competing values side",
             "by side; the implementation uses the column marked *used*.", ""]

    # 1. symmetric difference of two balls
    lines += ["## 1. Volume of B_r sym-diff (x + B_r)", "",
              "Spherical-cap volume (*used*) against the form with cap coefficient",
              "omega_d r^(d-1), and a direct cell count on a 2048^2 grid (d = 2, r = 1).", ""]
    rows = []
    for s in (0.05, 0.2, 0.5, 1.0, 1.5):
        rows.append([f"{s}", f"{bc.symdiff_balls(1.0, s, 2):.6f}", f"{bc.symdiff_stated(1.0, s, 2):.6f}",
                     f"{grid_symdiff(1.0, s):.6f}"])
    lines += _md_table(["|x|", "cap formula (used)", "omega_d coefficient", "grid count"], rows)
    rows = []
    for s in (0.2, 1.0):
        rows.append([f"{s}", f"{bc.symdiff_balls(1.0, s, 3):.6f}", f"{bc.symdiff_stated(1.0, s, 3):.6f}"])
    lines += ["", "d = 3, r = 1:", ""]
    lines += _md_table(["|x|", "cap formula (used)", "omega_d coefficient"], rows)
    lines += ["", "The two forms agree for |x| >= 2r, but with the omega_d coefficient the",
              "volume is negative near |x| = 0 (2 pi - pi^2 at d = 2, r = 1) where it must",
              "vanish. The cap coefficient is kappa_(d-1) r^d, confirmed by the cell count.", ""]

    # 2. slope at zero
    lines += ["## 2. Slope of the symmetric difference at |x| = 0", ""]
    rows = []
    for d, r in ((2, 1.0), (2, 0.5), (3, 1.0)):
        sr = bc.symdiff_slope_at_zero(r, d)
        rows.append([f"{d}", f"{r}", f"{sr.finite_difference:.6f}", f"{sr.cap_formula:.6f}", f"{sr.perimeter:.6f}"])
    lines += _md_table(["d", "r", "finite difference", "2 kappa_(d-1) r^(d-1)", "Per = omega_d r^(d-1)"], rows)
    lines += ["", "At d = 2 the slope is 4r, not the perimeter 2 pi r. The ball-chain",
              "prediction for the L1 rate therefore uses 2 kappa_(d-1) r^(d-1); the two",
              "agree only at d = 1, where both equal 2.", ""]

    # 3. sandwich exponent
    L, z0 = 0.5, 0.3
    table = bc.CoefficientTable.build(2, L, 2)
    lo, up = bc.sandwich_bounds(z0, L, 2, table, 40)
    neg = bc.sandwich_lower_negative_exponent(z0, L, 40)
    st = bc.simulate_chain([z0, 0.0], 0.1, L, 40, trials, seed, K=1, keep_paths=False)
    lines += ["## 3. Exponent in the lower envelope for E X_n", "",
              f"d = 2, L = {L}, z0 = {z0}, {trials} simulated chains.", ""]
    rows = []
    for n in (1, 2, 5, 10, 20, 40):
        rows.append([f"{n}", f"{lo[n]:.5f}", f"{neg[n]:.5f}", f"{st.mean(n):.5f} +- {st.mean_stderr(n):.5f}",
                     f"{up[n]:.5f}"])
    lines += _md_table(["n", "(1-(1-z0/4L)^(n+1))/(n+1) (used)", "exponent -(n+1)", "simulated E X_n",
                        "1/(c_1 n)"], rows)
    lines += ["", "With the negative exponent the envelope is negative for every n >= 0, so it",
              "bounds nothing; the positive exponent gives a valid lower envelope.", ""]

    # 4. comparison-chain scale
    lines += ["## 4. Scale gamma of the order-statistic comparison chain", "",
              "Candidates: 2Ld/eta_d (*used*, from bounding the kernel average) and",
              "2Ld eta_d. If the order-statistic chain is stochastically smaller than X_n",
              "then n E X_n >= d gamma asymptotically, which must not exceed the upper",
              f"constant 1/c_1. L = {L}, n = 200.", ""]
    rows = []
    for d in (2, 3):
        x0 = np.zeros(d)
        x0[0] = z0
        sim = bc.simulate_chain(x0, 0.1, L, 200, trials, seed, K=1, keep_paths=False)
        c1 = bc.coefficient(1, d, L)
        gd, gl = bc.burchard_gamma(d, L, "derived"), bc.burchard_gamma(d, L, "literal")
        rows.append([f"{d}", f"{quad.eta(d):.6f}", f"{d * gd:.4f}", f"{d * gl:.4f}",
                     f"{200 * sim.mean(200):.4f} +- {200 * sim.mean_stderr(200):.4f}",
                     f"{1 / c1:.4f}", f"{2 * L * d * quad.eta(d):.4f}"])
    lines += _md_table(["d", "eta_d", "d * 2Ld/eta_d", "d * 2Ld eta_d", "n E X_n (sim)", "1/c_1",
                        "2Ld eta_d"], rows)
    band = 2 * bc.dkw_epsilon(trials, 0.01)
    rows = []
    for d in (2, 3):
        ex = domination_excesses(d, L, z0, 50, trials, seed)
        rows.append([f"{d}", f"{ex['derived']:.4f}", f"{ex['literal']:.4f}", f"{ex['proj']:.4f}", f"{band:.4f}"])
    lines += ["", f"Largest ECDF excess sup(F_X - F_Y) at n = 50 ({trials} chains, alpha = 0.01):", ""]
    lines += _md_table(["d", "order statistic, 2Ld/eta_d", "order statistic, 2Ld eta_d",
                        "projected chain", "2 x DKW band"], rows)
    lines += ["", "The 2Ld eta_d scale violates domination and, at d = 3, its limit d gamma",
              "exceeds the upper constant 1/c_1. The constant 2Ld eta_d, offered as a lower",
              "limit for n E X_n, is below the simulated values: valid, but weaker than",
              "d * 2Ld/eta_d. Both equal 2L at d = 1.", ""]

    # 5. b_1
    lines += ["## 5. Lower-bound base b_d = 1 - gamma_d / 2", ""]
    rows = [[f"{d}", f"{quad.gamma_const(d):.10f}", f"{quad.b_const(d):.10f}"] for d in (1, 2, 3)]
    lines += _md_table(["d", "gamma_d", "b_d"], rows)
    lines += ["", "b_1 = 1/2 exactly, so the strict inequality b_d > 1/2 fails at d = 1.", ""]
    return "\n".join(lines) + "\n"
