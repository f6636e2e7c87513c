"""Monte Carlo convergence experiments for grid functions.

Each trial applies ``n_max`` independent random polarizations to ``f`` and
records the L1 distance to ``f*`` after every step. The averages estimate
z_n; c_n = n z_n is compared with the upper, lower and limsup bounds.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import geom, quad, rearrange
from .geom import BOUNDARY_TOL, sphere_area, unit_ball_volume
from .rearrange import GridFunction, _polarize_kernel, schwarz

MIN_TRIALS_FOR_VERDICT = 30


@dataclass
class ExperimentConfig:
    d: int = 1
    L: float = 1.0
    H: float = 1.0
    m: int = 128
    n_max: int = 100
    trials: int = 1000
    seed: int = 0
    thresholds: list | None = None
    threads: int = 1
    exact_1d: bool = True
    slack: float = 0.25
    tail_fraction: float = 0.25

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.H < self.L:
            raise ValueError("grid half-width H must be >= L")
        if self.trials < 1 or self.n_max < 0 or self.m < 1:
            raise ValueError("need trials >= 1, n_max >= 0, m >= 1")
        if self.thresholds is not None:
            t = np.asarray(self.thresholds, dtype=float)
            if np.any(np.diff(t) <= 0) or np.any(t < 0):
                raise ValueError("thresholds must be strictly increasing and nonnegative")
        if not 0 < self.tail_fraction <= 1:
            raise ValueError("tail_fraction must lie in (0, 1]")


@numba.njit(cache=True, nogil=True)
def _run_trials(init, ref, poles, xs, m, H, tol, cell_volume):
    # poles: (steps, B, d); returns (steps + 1, B) distances to ref
    steps, B = poles.shape[0], poles.shape[1]
    n = init.shape[0]
    out = np.empty((steps + 1, B))
    a = np.empty(n)
    b = np.empty(n)
    d0 = 0.0
    for i in range(n):
        d0 += abs(init[i] - ref[i])
    for t in range(B):
        a[:] = init
        out[0, t] = d0 * cell_volume
        for s in range(steps):
            _polarize_kernel(a, b, xs, m, H, poles[s, t], tol)
            acc = 0.0
            for i in range(n):
                acc += abs(b[i] - ref[i])
            out[s + 1, t] = acc * cell_volume
            a, b = b, a
    return out


@numba.njit(cache=True, nogil=True)
def _one_step_distances(src, ref, poles, xs, m, H, tol, cell_volume):
    B = poles.shape[0]
    n = src.shape[0]
    out = np.empty(B)
    buf = np.empty(n)
    for t in range(B):
        _polarize_kernel(src, buf, xs, m, H, poles[t], tol)
        acc = 0.0
        for i in range(n):
            acc += abs(buf[i] - ref[i])
        out[t] = acc * cell_volume
    return out


def _draw_step_poles(cfg: ExperimentConfig, h: float, steps: int, size: int, rng) -> np.ndarray:
    poles = np.empty((steps, size, cfg.d))
    for s in range(steps):
        poles[s] = geom.sample_poles(cfg.L, cfg.d, size, rng)
    if cfg.exact_1d and cfg.d == 1:
        snapped = np.round(poles / h) * h
        poles = np.where(snapped == 0, np.copysign(h, poles), snapped)
    return poles


def _map_blocks(fn, cfg: ExperimentConfig):
    blocks = list(geom.block_streams(cfg.seed, cfg.trials, block_size=256))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(fn, blocks))
    return [fn(b) for b in blocks]


@dataclass
class ConvergenceReport:
    config: ExperimentConfig
    z: np.ndarray
    stderr: np.ndarray
    upper_prop1: np.ndarray
    lower_b: np.ndarray
    limsup_target: float
    b_d: float
    perimeter_integral: float
    sup_norm: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.z.size)

    @property
    def c(self) -> np.ndarray:
        return self.n * self.z

    def tail_window(self) -> slice:
        n_max = self.z.size - 1
        start = max(1, n_max - int(math.ceil(self.config.tail_fraction * n_max)) + 1)
        return slice(start, n_max + 1)

    def to_csv(self, path) -> None:
        cfg = asdict(self.config)
        # the worker count does not affect results, so it stays out of the file
        cfg.pop("threads")
        lines = [f"# {k}={v!r}" for k, v in cfg.items()]
        lines += [f"# {k}={float(v)!r}" for k, v in self.meta.items()]
        lines.append("n,z_n,stderr,c_n,upper_prop1,lower_b,limsup_target")
        up = self.upper_prop1
        for n in range(self.z.size):
            row = (self.z[n], self.stderr[n], self.c[n], up[n], self.lower_b[n], self.limsup_target)
            lines.append(f"{n}," + ",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


def upper_bound_prop1(d: int, L: float, sup_norm: float, n: np.ndarray) -> np.ndarray:
    """2 d m(B_2L) ||f||_inf / n, infinite at n = 0."""
    n = np.asarray(n, dtype=float)
    vol = unit_ball_volume(d) * (2 * L) ** d
    out = np.full(n.shape, np.inf)
    out[n > 0] = 2 * d * vol * sup_norm / n[n > 0]
    return out


def _check_grid(f: GridFunction, cfg: ExperimentConfig) -> None:
    if f.d != cfg.d or f.m != cfg.m or not math.isclose(f.H, cfg.H):
        raise ValueError("grid function geometry does not match the experiment config")
    f.check_support(cfg.L)


def estimate_zn(f: GridFunction, cfg: ExperimentConfig) -> ConvergenceReport:
    _check_grid(f, cfg)
    fstar = schwarz(f)
    src = np.ascontiguousarray(f.values.ravel())
    ref = np.ascontiguousarray(fstar.values.ravel())
    n_max = cfg.n_max
    xs = f.centers()

    def run(block):
        stream, lo, hi = block
        poles = _draw_step_poles(cfg, f.h, n_max, hi - lo, stream.generator())
        dist = _run_trials(src, ref, poles, xs, f.m, float(f.H), BOUNDARY_TOL, f.cell_volume)
        return dist.sum(axis=1), (dist * dist).sum(axis=1)

    s1 = np.zeros(n_max + 1)
    s2 = np.zeros(n_max + 1)
    for a, b in _map_blocks(run, cfg):
        s1 += a
        s2 += b
    T = cfg.trials
    z = s1 / T
    var = np.maximum(s2 / T - z * z, 0.0) * T / max(T - 1, 1)
    se = np.sqrt(var / T)

    per = rearrange.perimeter_integral(f, cfg.thresholds)
    bd = quad.b_const(cfg.d)
    n = np.arange(n_max + 1)
    return ConvergenceReport(
        config=cfg,
        z=z,
        stderr=se,
        upper_prop1=upper_bound_prop1(cfg.d, cfg.L, f.sup, n),
        lower_b=bd**n * z[0],
        limsup_target=cfg.L * 2 ** (cfg.d + 1) * per,
        b_d=bd,
        perimeter_integral=per,
        sup_norm=f.sup,
        meta={"h": f.h, "mass": f.mass},
    )


def one_step_drop_mc(f: GridFunction, t: float, cfg: ExperimentConfig) -> tuple[float, float]:
    """Expected drop of m({f>t} sym-diff {f*>t}) after one random polarization.

    Uses ``cfg.trials`` reflections; returns (mean, standard error).
    """
    _check_grid(f, cfg)
    g = (f.values.ravel() > t).astype(float)
    gstar = (schwarz(f).values.ravel() > t).astype(float)
    base = float(np.abs(g - gstar).sum()) * f.cell_volume
    xs = f.centers()

    def run(block):
        stream, lo, hi = block
        poles = _draw_step_poles(cfg, f.h, 1, hi - lo, stream.generator())[0]
        after = _one_step_distances(g, gstar, poles, xs, f.m, float(f.H), BOUNDARY_TOL,
                                    f.cell_volume)
        drop = base - after
        return drop.sum(), (drop * drop).sum()

    s1 = s2 = 0.0
    for a, b in _map_blocks(run, cfg):
        s1 += a
        s2 += b
    T = cfg.trials
    mean = s1 / T
    var = max(s2 / T - mean * mean, 0.0) * T / max(T - 1, 1)
    return mean, math.sqrt(var / T)


@dataclass
class Verdict:
    lower_ok: bool
    upper_ok: bool
    limsup_ok: bool
    worst_lower: float  # min over n of (z_n + 3 se - lower)
    worst_upper: float  # min over n >= 1 of (upper + 3 se + grid slack - z_n)
    tail_max_c: float
    limsup_allowed: float
    grid_slack: float
    window: tuple

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok and self.limsup_ok

    def summary(self) -> str:
        flag = lambda b: "pass" if b else "FAIL"  # noqa: E731
        return "\n".join([
            f"lower bound b_d^n z_0     : {flag(self.lower_ok)} (min margin {self.worst_lower:.4g})",
            f"upper bound 2d m(B_2L)/n  : {flag(self.upper_ok)} (min margin {self.worst_upper:.4g},"
            f" grid slack {self.grid_slack:.3g})",
            f"limsup c_n over n in [{self.window[0]}, {self.window[1]}]: {flag(self.limsup_ok)}"
            f" (max c_n {self.tail_max_c:.4g} <= {self.limsup_allowed:.4g})",
        ])


def check_bounds(report: ConvergenceReport, f: GridFunction, cfg: ExperimentConfig | None = None) -> Verdict:
    cfg = cfg if cfg is not None else report.config
    if cfg.trials < MIN_TRIALS_FOR_VERDICT:
        raise ValueError(f"at least {MIN_TRIALS_FOR_VERDICT} trials are needed for a verdict")
    z, se = report.z, report.stderr
    lower_margin = z + 3 * se - report.lower_b
    # a cell-width band around every level set boundary
    grid_slack = report.perimeter_integral * f.h * math.sqrt(cfg.d)
    n = report.n
    upper_margin = (report.upper_prop1 + 3 * se + grid_slack - z)[n >= 1]
    win = report.tail_window()
    tail_max = float(np.max(report.c[win])) if report.z.size > 1 else 0.0
    allowed = report.limsup_target * (1 + cfg.slack)
    return Verdict(
        lower_ok=bool(np.all(lower_margin >= 0)),
        upper_ok=bool(np.all(upper_margin >= 0)) if upper_margin.size else True,
        limsup_ok=tail_max <= allowed,
        worst_lower=float(lower_margin.min()),
        worst_upper=float(upper_margin.min()) if upper_margin.size else math.inf,
        tail_max_c=tail_max,
        limsup_allowed=allowed,
        grid_slack=grid_slack,
        window=(win.start, win.stop - 1),
    )


# ---------------------------------------------------------------------------
# fixtures

FIXTURES = {
    "interval-d1": dict(d=1, L=1.0, H=1.0),
    "disk-d2": dict(d=2, L=1.0, H=1.0),
    "bump-d2": dict(d=2, L=1.0, H=1.0),
    "ball-d3": dict(d=3, L=1.0, H=1.0),
}


def fixture_config(name: str, **overrides) -> ExperimentConfig:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    kw = dict(FIXTURES[name])
    kw.update(overrides)
    return ExperimentConfig(**kw)


def build_fixture(name: str, cfg: ExperimentConfig) -> GridFunction:
    if name == "interval-d1":
        return rearrange.indicator_interval(cfg.H, cfg.m, 0.2, 0.6)
    if name == "disk-d2":
        return rearrange.indicator_ball(2, cfg.H, cfg.m, [0.35, 0.0], 0.3)
    if name == "bump-d2":
        return rearrange.radial_bump(2, cfg.H, cfg.m, [-0.2, 0.25], 0.4)
    if name == "ball-d3":
        return rearrange.indicator_ball(3, cfg.H, cfg.m, [0.3, 0.1, 0.0], 0.3)
    raise KeyError(f"unknown fixture {name!r}")
