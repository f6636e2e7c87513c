"""Command-line driver: ``polarlab converge|ball|constants|verify``.

Every run writes its outputs, a ``manifest.json`` and plain CSV plot data
under ``--out``. Exit status: 0 pass, 1 a verdict failed, 2 bad usage or
configuration.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import ballchain as bc
from . import geom, harness, quad, rearrange, verify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, config or input data; maps to exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise ValueError(f"expected a positive integer, got {s}")
    return v


def _bool(s):
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# option name -> (type, default); shared by flags and config files
COMMON = {
    "seed": (int, None),
    "threads": (_positive_int, 1),
    "out": (str, "polarlab-out"),
}
OPTIONS = {
    "converge": {
        "fixture": (str, None),
        "grid": (str, None),
        "d": (int, None),
        "L": (float, 1.0),
        "H": (float, None),
        "m": (_positive_int, 128),
        "n": (int, 100),
        "trials": (_positive_int, 1000),
        "slack": (float, 0.25),
        "tail_fraction": (float, 0.25),
        "exact_1d": (_bool, True),
    },
    "ball": {
        "mode": (str, "chain"),
        "d": (int, 1),
        "L": (float, 0.5),
        "z0": (float, 0.3),
        "r": (float, None),
        "n": (int, 100),
        "trials": (_positive_int, 10000),
        "K": (_positive_int, 4),
        "alpha": (float, 0.01),
        "gamma_variant": (str, "derived"),
    },
    "constants": {
        "d": (int, 1),
        "L": (float, 0.5),
        "K": (_positive_int, 6),
        "mc_samples": (_positive_int, 10**6),
    },
    "verify": {
        "quick": (_bool, False),
        "report_trials": (_positive_int, 10000),
    },
}
BALL_MODES = ("chain", "moments", "exp-limit", "domination", "sandwich")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polarlab", description="Random polarization experiments.", allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"polarlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI file with [polarlab] and per-command sections")
        sp.add_argument("--seed", default=None, help="master seed (default: $POLARLAB_SEED or 0)")
        sp.add_argument("--threads", default=None, help="worker threads")
        sp.add_argument("--out", default=None, help="output directory")

    c = sub.add_parser("converge", allow_abbrev=False, help="grid convergence experiment and bound verdicts")
    common(c)
    c.add_argument("--fixture", default=None, help=f"one of {', '.join(sorted(harness.FIXTURES))}")
    c.add_argument("--grid", default=None, help="CSV grid file instead of a fixture")
    for name in ("d", "L", "H", "m", "n", "trials", "slack", "tail-fraction", "exact-1d"):
        c.add_argument(f"--{name}", default=None)

    b = sub.add_parser("ball", allow_abbrev=False, help="ball chain experiments")
    common(b)
    b.add_argument("--mode", default=None, help=" | ".join(BALL_MODES))
    for name in ("d", "L", "z0", "r", "n", "trials", "K", "alpha", "gamma-variant"):
        b.add_argument(f"--{name}", default=None)

    k = sub.add_parser("constants", allow_abbrev=False, help="c_k, gamma_d, eta_d, b_d with cross-checks")
    common(k)
    for name in ("d", "L", "K", "mc-samples"):
        k.add_argument(f"--{name}", default=None)

    v = sub.add_parser("verify", allow_abbrev=False, help="reduced-scale self checks and discrepancy report")
    common(v)
    v.add_argument("--quick", action="store_const", const="true", default=None)
    v.add_argument("--report-trials", default=None)
    return p


def _read_config(path: str, command: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    allowed = set(COMMON) | set(OPTIONS[command])
    values = {}
    for section in cp.sections():
        if section not in ("polarlab", *OPTIONS):
            raise UsageError(f"config {path}: unknown section [{section}]")
        if section not in ("polarlab", command):
            continue
        for key, val in cp.items(section):
            name = key.replace("-", "_")
            if section == "polarlab" and name not in COMMON and name not in OPTIONS[command]:
                # keys of other commands may live in the common section
                if not any(name in opts for opts in OPTIONS.values()):
                    raise UsageError(f"config {path}: unknown key {key!r} in [{section}]")
                continue
            if name not in allowed:
                raise UsageError(f"config {path}: unknown key {key!r} in [{section}]")
            values[name] = val
    return values


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) into typed values."""
    command = args.command
    specs = {**COMMON, **OPTIONS[command]}
    raw = _read_config(args.config, command) if args.config else {}
    for name in specs:
        flag = getattr(args, name, None)
        if flag is not None:
            raw[name] = flag
    cfg = {}
    for name, (typ, default) in specs.items():
        if name in raw:
            try:
                cfg[name] = typ(raw[name])
            except ValueError as exc:
                raise UsageError(f"invalid value for {name}: {exc}") from None
        else:
            cfg[name] = default
    if cfg["seed"] is None:
        env = os.environ.get("POLARLAB_SEED")
        try:
            cfg["seed"] = int(env) if env else 0
        except ValueError:
            raise UsageError(f"POLARLAB_SEED is not an integer: {env!r}") from None
    if cfg["seed"] < 0:
        raise UsageError("seed must be nonnegative")
    return cfg


class RunDir:
    """Output directory that records what was written for the manifest."""

    def __init__(self, path: str):
        self.path = Path(path)
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {path}: {exc}") from None
        self.files: list[str] = []

    def file(self, name: str) -> Path:
        self.files.append(name)
        return self.path / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.file(name)
        p.write_text(text)
        return p

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([_fmt(v) for v in row] for row in rows)
        return self.write_text(name, buf.getvalue())

    def manifest(self, command: str, cfg: dict, status: str, extra: dict | None = None) -> None:
        doc = {
            "artifact": "polarlab",
            "version": __version__,
            "command": command,
            "config": cfg,
            "seed": cfg["seed"],
            "status": status,
            "outputs": sorted(self.files),
        }
        if extra:
            doc["results"] = extra
        (self.path / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


# ---------------------------------------------------------------------------
# converge


def cmd_converge(cfg: dict) -> int:
    if (cfg["fixture"] is None) == (cfg["grid"] is None):
        raise UsageError("give exactly one of --fixture or --grid")
    if cfg["n"] < 0:
        raise UsageError("--n must be nonnegative")
    base = dict(m=cfg["m"], n_max=cfg["n"], trials=cfg["trials"], seed=cfg["seed"],
                threads=cfg["threads"], slack=cfg["slack"], tail_fraction=cfg["tail_fraction"],
                exact_1d=cfg["exact_1d"])
    try:
        if cfg["fixture"] is not None:
            if cfg["fixture"] not in harness.FIXTURES:
                raise UsageError(f"unknown fixture {cfg['fixture']!r}; choose from "
                                 f"{', '.join(sorted(harness.FIXTURES))}")
            fx = harness.FIXTURES[cfg["fixture"]]
            if cfg["d"] is not None and cfg["d"] != fx["d"]:
                raise UsageError(f"fixture {cfg['fixture']} is {fx['d']}-dimensional")
            extra = {"L": cfg["L"], "H": cfg["H"] if cfg["H"] is not None else max(cfg["L"], fx["H"])}
            ecfg = harness.fixture_config(cfg["fixture"], **base, **extra)
            f = harness.build_fixture(cfg["fixture"], ecfg)
            f.check_support(ecfg.L)
        else:
            try:
                f = rearrange.from_csv(cfg["grid"])
            except FileNotFoundError:
                raise UsageError(f"grid file not found: {cfg['grid']}") from None
            if cfg["d"] is not None and cfg["d"] != f.d:
                raise UsageError(f"grid file is {f.d}-dimensional, --d says {cfg['d']}")
            base["m"] = f.m
            ecfg = harness.ExperimentConfig(d=f.d, L=cfg["L"], H=f.H, **base)
            f.check_support(ecfg.L)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    run = RunDir(cfg["out"])
    report = harness.estimate_zn(f, ecfg)
    report.to_csv(run.file("report.csv"))
    if ecfg.trials >= harness.MIN_TRIALS_FOR_VERDICT:
        verdict = harness.check_bounds(report, f, ecfg)
        text = verdict.summary()
        ok = verdict.ok
        results = asdict(verdict)
    else:
        text = f"no verdict: fewer than {harness.MIN_TRIALS_FOR_VERDICT} trials"
        ok = True
        results = {}
    run.write_text("verdict.txt", text + "\n")
    print(text)
    run.manifest("converge", cfg, _status(ok), results)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# ball


def _ball_geometry(cfg: dict):
    d, L, z0 = cfg["d"], cfg["L"], cfg["z0"]
    if d < 1:
        raise UsageError("--d must be >= 1")
    if not L > 0:
        raise UsageError("--L must be positive")
    if not z0 > 0:
        raise UsageError("--z0 must be positive")
    r = cfg["r"] if cfg["r"] is not None else 0.5 * (L - z0)
    if not r > 0 or z0 + r >= L:
        raise UsageError(f"invalid geometry: need r > 0 and |x0| + r < L (got {z0} + {r} vs {L})")
    if cfg["n"] < 0:
        raise UsageError("--n must be nonnegative")
    x0 = np.zeros(d)
    x0[0] = z0
    return x0, r


def _ball_chain(cfg, run, x0, r):
    st = bc.simulate_chain(x0, r, cfg["L"], cfg["n"], cfg["trials"], cfg["seed"], K=cfg["K"],
                           keep_paths=False, threads=cfg["threads"])
    st.to_csv(run.file("chain.csv"))
    n = cfg["n"]
    print(f"E X_{n} = {st.mean(n):.6g} +- {st.mean_stderr(n):.2g}; "
          f"n E X_n = {n * st.mean(n):.6g}")
    return True, {"mean": st.mean(n), "stderr": st.mean_stderr(n)}


def _ball_moments(cfg, run, x0, r):
    n_max = min(cfg["n"], 10)
    if n_max < 1:
        raise UsageError("moments mode needs --n >= 1")
    K = min(cfg["K"], 3)
    st = bc.simulate_chain(x0, r, cfg["L"], n_max, cfg["trials"], cfg["seed"], K=K + 1,
                           keep_paths=True, threads=cfg["threads"])
    table = bc.CoefficientTable.build(cfg["d"], cfg["L"], K + 1)
    rows = []
    for k in range(1, K + 1):
        for n in range(1, n_max + 1):
            res, se = bc.moment_recurrence_residual(st, table, n, k)
            rows.append((n, k, res, se, res / se if se > 0 else 0.0))
    run.write_csv("moments.csv", ["n", "k", "residual", "stderr", "z"], rows)
    worst = max(rows, key=lambda e: abs(e[4]))
    ok = all(abs(e[4]) <= 3 for e in rows)
    print(f"{'n':>3} {'k':>2} {'residual':>12} {'stderr':>10} {'z':>6}")
    for e in rows:
        print(f"{e[0]:3d} {e[1]:2d} {e[2]:12.3e} {e[3]:10.3e} {e[4]:+6.2f}")
    print(f"worst |z| = {abs(worst[4]):.2f} at n={worst[0]}, k={worst[1]}: {_status(ok)}")
    return ok, {"worst_z": worst[4]}


def _ball_exp_limit(cfg, run, x0, r):
    if cfg["d"] != 1:
        raise UsageError("exp-limit mode is defined for --d 1")
    st = bc.simulate_chain(x0, r, cfg["L"], cfg["n"], cfg["trials"], cfg["seed"], K=1,
                           keep_paths=False, threads=cfg["threads"])
    from scipy import stats

    scaled = cfg["n"] * st.final
    ks = float(stats.kstest(scaled, stats.expon(scale=2 * cfg["L"]).cdf).statistic)
    t = np.linspace(0.0, 6 * cfg["L"], 121)
    rows = zip(t, bc.ecdf(scaled, t), stats.expon(scale=2 * cfg["L"]).cdf(t))
    run.write_csv("exp_limit.csv", ["t", "ecdf", "exp_cdf"], rows)
    ok = ks < 0.02
    print(f"KS(n X_n, Exp(mean {2 * cfg['L']:g})) = {ks:.5f} at n = {cfg['n']}: {_status(ok)}")
    return ok, {"ks": ks}


def _ball_domination(cfg, run, x0, r):
    d, L, n, T, seed = cfg["d"], cfg["L"], cfg["n"], cfg["trials"], cfg["seed"]
    try:
        gamma = bc.burchard_gamma(d, L, cfg["gamma_variant"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    kw = dict(K=1, keep_paths=False, threads=cfg["threads"])
    ball = bc.simulate_chain(x0, r, L, n, T, seed, **kw)
    proj = bc.projected_chain(x0, L, n, T, seed, **kw)
    os_ = bc.order_statistic_chain(min(cfg["z0"], gamma), gamma, d, n, T, seed + 1, **kw)
    band = 2 * bc.dkw_epsilon(T, cfg["alpha"])
    e_proj = bc.domination_excess(ball.final, proj.final)
    e_os = bc.domination_excess(ball.final, os_.final)
    hi = max(ball.final.max(), proj.final.max(), os_.final.max())
    t = np.linspace(0.0, hi, 201)
    rows = zip(t, bc.ecdf(ball.final, t), bc.ecdf(proj.final, t), bc.ecdf(os_.final, t))
    run.write_csv("domination.csv", ["t", "ecdf_ball", "ecdf_projected", "ecdf_order_statistic"], rows)
    ok = e_proj <= band and e_os <= band
    print(f"gamma ({cfg['gamma_variant']}) = {gamma:.6g}; DKW band 2 eps = {band:.4f}")
    print(f"sup(F_ball - F_projected)       = {e_proj:.4f}")
    print(f"sup(F_ball - F_order_statistic) = {e_os:.4f}")
    print(_status(ok))
    return ok, {"gamma": gamma, "band": band, "excess_projected": e_proj, "excess_order_statistic": e_os}


def _ball_sandwich(cfg, run, x0, r):
    d, L, n = cfg["d"], cfg["L"], cfg["n"]
    table = bc.CoefficientTable.build(d, L, 1)
    lo, up = bc.sandwich_bounds(cfg["z0"], L, d, table, n)
    neg = bc.sandwich_lower_negative_exponent(cfg["z0"], L, n)
    st = bc.simulate_chain(x0, r, L, n, cfg["trials"], cfg["seed"], K=1, keep_paths=False,
                           threads=cfg["threads"])
    m, se = st.moments[:, 0], st.stderr[:, 0]
    rows = zip(range(n + 1), lo, m, se, up, neg)
    run.write_csv("sandwich.csv", ["n", "lower", "mean", "stderr", "upper", "lower_negative_exponent"], rows)
    ok_lo = bool(np.all(m + 3 * se >= lo))
    ok_up = bool(np.all(m - 3 * se <= up))
    print(f"lower envelope {_status(ok_lo)}, upper envelope {_status(ok_up)}; "
          f"negative-exponent variant min {neg.min():.4g}")
    return ok_lo and ok_up, {"lower_ok": ok_lo, "upper_ok": ok_up}


def cmd_ball(cfg: dict) -> int:
    if cfg["mode"] not in BALL_MODES:
        raise UsageError(f"unknown mode {cfg['mode']!r}; choose from {', '.join(BALL_MODES)}")
    x0, r = _ball_geometry(cfg)
    run = RunDir(cfg["out"])
    fn = {"chain": _ball_chain, "moments": _ball_moments, "exp-limit": _ball_exp_limit,
          "domination": _ball_domination, "sandwich": _ball_sandwich}[cfg["mode"]]
    ok, results = fn(cfg, run, x0, r)
    run.manifest("ball", cfg, _status(ok), results)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# constants


def cmd_constants(cfg: dict) -> int:
    d, L, K, S, seed = cfg["d"], cfg["L"], cfg["K"], cfg["mc_samples"], cfg["seed"]
    if d < 1:
        raise UsageError("--d must be >= 1")
    if not L > 0:
        raise UsageError("--L must be positive")
    run = RunDir(cfg["out"])
    rows = []
    ok = True

    def add(name, route, value, check, se=None):
        nonlocal ok
        if se is None:
            good = abs(value - check) <= 1e-10 * max(1.0, abs(check))
            z = ""
        else:
            z = (check - value) / se if se > 0 else 0.0
            good = abs(z) < 3
        ok &= good
        rows.append((name, route, value, check, "" if se is None else se, z, _status(good)))

    for k in range(1, K + 1):
        ck = bc.coefficient(k, d, L)
        if d == 1:
            add(f"c_{k}", "closed form", ck, k / ((k + 1) * 2 * L))
        else:
            add(f"c_{k}", "radial", ck, quad.ck_integral_radial(k, d) / (2 * L * geom.sphere_area(d)))
            m, se = quad.coefficient_mc(k, d, L, S, seed + k)
            add(f"c_{k}", "monte carlo", ck, m, se)
    g, e = quad.gamma_const(d), quad.eta(d)
    add("eta", "closed form", e, quad.eta_closed_form(d))
    add("b", "1 - gamma/2", quad.b_const(d), 1 - g / 2)
    if d == 1:
        add("gamma", "closed form", g, 1.0)
    else:
        m, se = quad.gamma_mc(d, S, seed + 101)
        add("gamma", "monte carlo", g, m, se)
        m, se = quad.eta_mc(d, S, seed + 102)
        add("eta", "monte carlo", e, m, se)
    run.write_csv("constants.csv", ["name", "route", "quadrature", "cross_check", "stderr", "z", "status"],
                  rows)
    print(f"{'name':<6} {'quadrature':>16} {'cross-check':>16} {'route':<12} {'s.e.':>10} {'z':>6}")
    for name, route, v, c, se, z, st in rows:
        se_s = f"{se:10.2e}" if se != "" else " " * 10
        z_s = f"{z:+6.2f}" if z != "" else " " * 6
        print(f"{name:<6} {v:16.12f} {c:16.12f} {route:<12} {se_s} {z_s} {st}")
    run.manifest("constants", cfg, _status(ok), {"gamma": g, "eta": e, "b": quad.b_const(d)})
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# verify


def cmd_verify(cfg: dict) -> int:
    run = RunDir(cfg["out"])
    t0 = time.perf_counter()

    def show(res):
        print(f"[{_status(res.ok).upper():4}] {res.name}: {res.detail} ({res.seconds:.1f}s)")

    results = verify.run_checks(cfg["seed"], cfg["quick"], progress=show)
    rows = [(r.name, _status(r.ok), r.detail) for r in results]
    run.write_csv("verify.csv", ["check", "status", "detail"], rows)
    run.write_text("discrepancy_report.md", verify.discrepancy_report(cfg["seed"], cfg["report_trials"]))
    ok = all(r.ok for r in results)
    print(f"{sum(r.ok for r in results)}/{len(results)} checks passed "
          f"in {time.perf_counter() - t0:.1f}s; report at {run.path / 'discrepancy_report.md'}")
    run.manifest("verify", cfg, _status(ok), {r.name: r.ok for r in results})
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"converge": cmd_converge, "ball": cmd_ball, "constants": cmd_constants, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"polarlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
