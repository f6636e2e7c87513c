"""Random polarizations of a single ball.

A ball polarizes to itself or to its mirror image, whichever has its centre
on the origin side, so only the centre has to be tracked. ``X_n`` is the
distance of the centre from the origin after ``n`` random polarizations.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy import integrate, stats

from . import geom, quad
from .geom import BOUNDARY_TOL, Reflection, Side, classify, reflect, sphere_area, unit_ball_volume

# paths are kept for residual/ECDF work only below this many floats
PATH_BUDGET = 2 * 10**7


@dataclass(frozen=True)
class BallState:
    center: np.ndarray
    radius: float
    L: float

    def __post_init__(self):
        c = geom.as_point(self.center)
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if not np.linalg.norm(c) + self.radius < self.L:
            raise ValueError(f"ball of radius {self.radius} at {c.tolist()} is not inside B_{self.L}")

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.center))


def polarize_ball(b: BallState, r: Reflection) -> BallState:
    if classify(r, b.center) is Side.MINUS:
        return BallState(reflect(r, b.center), b.radius, b.L)
    return b


# ---------------------------------------------------------------------------
# simulation


@dataclass
class ChainStatistics:
    """Per-step moment estimates of a simulated chain.

    ``moments[n, k-1]`` estimates E[X_n^k]; ``paths`` (trials x steps+1) is
    kept when it fits in :data:`PATH_BUDGET`, ``final`` always holds X at the
    last step.
    """

    d: int
    L: float
    z0: float
    seed: int
    trials: int
    moments: np.ndarray
    stderr: np.ndarray
    final: np.ndarray
    paths: np.ndarray | None = None
    label: str = "chain"

    @property
    def steps(self) -> int:
        return self.moments.shape[0] - 1

    @property
    def K(self) -> int:
        return self.moments.shape[1]

    def mean(self, n: int | None = None):
        m = self.moments[:, 0]
        return m if n is None else float(m[n])

    def mean_stderr(self, n: int | None = None):
        s = self.stderr[:, 0]
        return s if n is None else float(s[n])

    def samples(self, n: int) -> np.ndarray:
        if n == self.steps:
            return self.final
        if self.paths is None:
            raise ValueError(f"per-trial values for step {n} were not kept")
        return self.paths[:, n]

    def ecdf(self, n: int, t: np.ndarray) -> np.ndarray:
        return ecdf(self.samples(n), t)

    def to_csv(self, path) -> None:
        lines = [f"# d={self.d},L={float(self.L)!r},z0={float(self.z0)!r},seed={self.seed},chain={self.label}",
                 "n,k,moment,stderr,trials"]
        for n in range(self.steps + 1):
            for k in range(1, self.K + 1):
                lines.append(f"{n},{k},{float(self.moments[n, k - 1])!r},{float(self.stderr[n, k - 1])!r},"
                             f"{self.trials}")
        Path(path).write_text("\n".join(lines) + "\n")


def _run_blocks(init: Callable, step: Callable, dist: Callable, n: int, trials: int, seed: int,
                K: int, keep_paths: bool | None, threads: int = 1):
    """Drive ``trials`` independent chains for ``n`` steps in RNG blocks.

    ``init(size, rng)`` gives the state array, ``step(state, rng)`` the next
    state, ``dist(state)`` the tracked distance. Blocks are reduced in block
    order, so the result does not depend on ``threads``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n < 0:
        raise ValueError("step count must be nonnegative")
    if keep_paths is None:
        keep_paths = trials * (n + 1) <= PATH_BUDGET
    blocks = list(geom.block_streams(seed, trials))
    powers = np.arange(1, K + 1)

    def run(block):
        stream, lo, hi = block
        rng = stream.generator()
        state = init(hi - lo, rng)
        s1 = np.empty((n + 1, K))
        s2 = np.empty((n + 1, K))
        path = np.empty((hi - lo, n + 1)) if keep_paths else None
        for i in range(n + 1):
            if i:
                state = step(state, rng)
            x = dist(state)
            xp = x[:, None] ** powers
            s1[i] = xp.sum(axis=0)
            s2[i] = (xp * xp).sum(axis=0)
            if path is not None:
                path[:, i] = x
        return s1, s2, x, path

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    s1 = np.zeros((n + 1, K))
    s2 = np.zeros((n + 1, K))
    for r in results:
        s1 += r[0]
        s2 += r[1]
    mean = s1 / trials
    var = np.maximum(s2 / trials - mean**2, 0.0) * trials / max(trials - 1, 1)
    se = np.sqrt(var / trials)
    final = np.concatenate([r[2] for r in results])
    paths = np.concatenate([r[3] for r in results]) if keep_paths else None
    return mean, se, final, paths


def _ball_step(L: float, d: int):
    def step(c, rng):
        poles = geom.sample_poles(L, d, c.shape[0], rng)
        p2 = np.einsum("ij,ij->i", poles, poles)
        dist = (np.einsum("ij,ij->i", c, poles) - 0.5 * p2) / np.sqrt(p2)
        moved = geom.reflect_many(poles, c)
        return np.where((dist > BOUNDARY_TOL)[:, None], moved, c)

    return step


def simulate_chain(x0, r: float, L: float, n: int, trials: int, seed: int, K: int = 4,
                   keep_paths: bool | None = None, threads: int = 1) -> ChainStatistics:
    """Simulate X_n for ``trials`` independent runs started from the ball (x0, r)."""
    b = BallState(x0, r, L)
    d = b.center.shape[0]
    c0 = b.center
    mean, se, final, paths = _run_blocks(
        lambda size, rng: np.tile(c0, (size, 1)), _ball_step(L, d),
        lambda c: np.linalg.norm(c, axis=1), n, trials, seed, K, keep_paths, threads,
    )
    return ChainStatistics(d, L, b.distance, seed, trials, mean, se, final, paths, "ball")


def projected_chain(x0, L: float, n: int, trials: int, seed: int, K: int = 4,
                    keep_paths: bool | None = None, threads: int = 1) -> ChainStatistics:
    """The chain driven by the same poles, each replaced by +-|pole| along x0.

    Draws are consumed exactly as in :func:`simulate_chain`, so equal seeds
    couple the two chains reflection by reflection.
    """
    x0 = geom.as_point(x0)
    a = float(np.linalg.norm(x0))
    if a == 0:
        raise ValueError("x0 must be nonzero")
    d = x0.shape[0]
    unit = x0 / a

    def step(y, rng):
        poles = geom.sample_poles(L, d, y.shape[0], rng)
        size = np.linalg.norm(poles, axis=1)
        tau = np.where(poles @ unit < 0, -size, size)
        minus = (y * tau - 0.5 * tau * tau) / size > BOUNDARY_TOL
        return np.where(minus, tau - y, y)

    mean, se, final, paths = _run_blocks(
        lambda size, rng: np.full(size, a), step, np.abs, n, trials, seed, K, keep_paths, threads,
    )
    return ChainStatistics(d, L, a, seed, trials, mean, se, final, paths, "projected")


def order_statistic_step(y: np.ndarray, u: np.ndarray, gamma: float, d: int) -> np.ndarray:
    """One step of the d-th order statistic chain driven by uniforms ``u``.

    P(Y' <= b | Y = y) = (b / gamma) (b / y)^(d-1) for b < y; the remaining
    mass 1 - y / gamma stays at y.
    """
    jump = u < y / gamma
    new = (u * gamma * y ** (d - 1)) ** (1.0 / d)
    return np.where(jump, np.minimum(new, y), y)


def order_statistic_chain(x0: float | None, gamma: float, d: int, n: int, trials: int, seed: int,
                          K: int = 4, keep_paths: bool | None = None,
                          threads: int = 1) -> ChainStatistics:
    """d-th smallest of n + d uniforms on [0, gamma], run as a Markov chain.

    With ``x0=None`` the chain starts from the maximum of d uniforms, i.e.
    the unconditioned order statistic. Otherwise it starts exactly at x0,
    which is the chain conditioned on Y_0 = x0.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if x0 is not None and not 0 <= x0 <= gamma:
        raise ValueError("x0 must lie in [0, gamma]")

    def init(size, rng):
        if x0 is None:
            return gamma * rng.random((size, d)).max(axis=1)
        return np.full(size, float(x0))

    def step(y, rng):
        return order_statistic_step(y, rng.random(y.shape[0]), gamma, d)

    mean, se, final, paths = _run_blocks(init, step, lambda y: y, n, trials, seed, K,
                                         keep_paths, threads)
    z0 = float(x0) if x0 is not None else d * gamma / (d + 1)
    return ChainStatistics(d, float("nan"), z0, seed, trials, mean, se, final, paths,
                           f"order-statistic(gamma={float(gamma)!r})")


def order_statistic_sample(n: int, gamma: float, d: int, size: int,
                           rng: np.random.Generator, chunk: int = 2000) -> np.ndarray:
    """Direct draws of the d-th smallest of n + d uniforms on [0, gamma]."""
    out = np.empty(size)
    for lo in range(0, size, chunk):
        hi = min(lo + chunk, size)
        u = rng.random((hi - lo, n + d))
        out[lo:hi] = np.partition(u, d - 1, axis=1)[:, d - 1]
    return gamma * out


def burchard_gamma(d: int, L: float, variant: str = "derived") -> float:
    """Scale of the order-statistic comparison chain.

    ``derived`` is 2 L d / eta_d, from bounding the kernel average over B_lam
    by lam^(d-1) eta_d / d; ``literal`` is 2 L d eta_d, the form in which the
    comparison bound is usually displayed.
    """
    e = quad.eta(d)
    if variant == "derived":
        return 2 * L * d / e
    if variant == "literal":
        return 2 * L * d * e
    raise ValueError(f"unknown gamma variant {variant!r}")


@dataclass(frozen=True)
class DominatingChain:
    """A comparison chain for the d-dimensional ball chain."""

    variant: str  # "projected" or "order-statistic"
    x0: np.ndarray
    L: float
    d: int
    gamma: float | None = None

    def simulate(self, n: int, trials: int, seed: int, **kw) -> ChainStatistics:
        if self.variant == "projected":
            return projected_chain(self.x0, self.L, n, trials, seed, **kw)
        if self.variant == "order-statistic":
            x0 = float(np.linalg.norm(self.x0))
            return order_statistic_chain(x0, self.gamma, self.d, n, trials, seed, **kw)
        raise ValueError(f"unknown variant {self.variant!r}")


# ---------------------------------------------------------------------------
# coefficients and moment identities


def coefficient(k: int, d: int, L: float) -> float:
    """c_k = (2 L omega_d)^-1 times the integral of (1 - |y|^k)|u - y|^-(d-1) over B_1."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return 1.0
    return quad.ck_integral(k, d) / (2 * L * sphere_area(d))


def coefficient_d1_exact(k: int, L) -> Fraction:
    if k == 0:
        return Fraction(1)
    return Fraction(k, k + 1) / (2 * Fraction(L))


@dataclass
class CoefficientTable:
    d: int
    L: float
    values: list
    exact: bool = False

    @classmethod
    def build(cls, d: int, L: float, K: int, exact: bool | None = None) -> "CoefficientTable":
        """c_0..c_K; exact rational values when d = 1 (unless ``exact=False``)."""
        if exact is None:
            exact = d == 1
        if exact and d != 1:
            raise ValueError("exact coefficients are only available for d = 1")
        if exact:
            vals = [coefficient_d1_exact(k, L) for k in range(K + 1)]
        else:
            vals = [coefficient(k, d, L) for k in range(K + 1)]
        return cls(d, L, vals, exact)

    @property
    def K(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k: int):
        return self.values[k]

    def products(self) -> list:
        """Partial products prod_{i<=k} c_i for k = 0..K."""
        out, acc = [], self.values[0] * 0 + 1
        for c in self.values:
            acc = acc * c
            out.append(acc)
        return out


class PrecisionError(ArithmeticError):
    pass


def zn_exact(z0: float, d: int, L: float, n: int, precision: str = "double",
             table: CoefficientTable | None = None, budget: float = 1e-8) -> float:
    """E[X_n] from the binomial representation in the coefficients c_k.

    d = 1 is evaluated in exact rational arithmetic. Otherwise the alternating
    sum is accumulated with ``math.fsum`` (``precision="double"``) or with
    high-precision coefficients (``precision="mp"``); if the estimated
    relative error exceeds ``budget`` a :class:`PrecisionError` is raised.
    """
    if not 0 < z0 < L:
        raise ValueError("need 0 < z0 < L")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if d == 1:
        z = Fraction(z0)
        prods = CoefficientTable.build(1, Fraction(L), n, exact=True).products()
        total = sum(math.comb(n, k) * (-1) ** k * z ** (k + 1) * prods[k] for k in range(n + 1))
        return float(total)
    if precision == "mp":
        dps = 30
        with mpmath.workdps(dps):
            cs = [mpmath.mpf(1)] + [quad.ck_integral_mp(k, d, dps) / (2 * mpmath.mpf(L) * sphere_area_mp(d))
                                    for k in range(1, n + 1)]
            z = mpmath.mpf(z0)
            acc, prod, terms = mpmath.mpf(0), mpmath.mpf(1), []
            for k in range(n + 1):
                prod *= cs[k]
                t = math.comb(n, k) * (-1) ** k * z ** (k + 1) * prod
                terms.append(t)
            total = mpmath.fsum(terms)
            cond = mpmath.fsum(abs(t) for t in terms) / abs(total)
            if cond * mpmath.mpf(10) ** (-(dps - 10)) > budget:
                raise PrecisionError(f"alternating sum too ill-conditioned at n={n} even in mp mode")
            return float(total)
    if precision != "double":
        raise ValueError(f"unknown precision mode {precision!r}")
    tab = table if table is not None else CoefficientTable.build(d, L, n)
    if tab.K < n:
        raise ValueError("coefficient table too short")
    prods = tab.products()
    terms = [math.comb(n, k) * (-1) ** k * z0 ** (k + 1) * prods[k] for k in range(n + 1)]
    total = math.fsum(terms)
    cond = math.fsum(abs(t) for t in terms) / abs(total)
    # quadrature coefficients carry ~1e-12 relative error each
    err = cond * 1e-12 * (n + 1)
    if err > budget:
        raise PrecisionError(
            f"alternating sum at n={n} has condition number {cond:.3g}; use precision='mp'"
        )
    return total


def sphere_area_mp(d: int):
    return 2 * mpmath.pi ** (mpmath.mpf(d) / 2) / mpmath.gamma(mpmath.mpf(d) / 2)


def alternating_difference(values: Sequence, n: int, j: int):
    """(-1)^n Delta^n applied at index j to ``values`` (forward differences)."""
    return sum((-1) ** n * math.comb(n, i) * (-1) ** (n - i) * values[j + i] for i in range(n + 1))


@dataclass
class SignReport:
    entries: list = field(default_factory=list)  # (n, j, value, tol, ok)

    @property
    def ok(self) -> bool:
        return all(e[-1] for e in self.entries)

    @property
    def worst(self):
        return min(self.entries, key=lambda e: float(e[2]))


def hausdorff_sign_check(table: CoefficientTable, n_max: int, j_max: int,
                         rel_tol: float = 1e-10) -> SignReport:
    """Check (-1)^n Delta^n prod_{i<=j} c_i >= 0 for n <= n_max, j <= j_max."""
    if table.K < n_max + j_max:
        raise ValueError("coefficient table must reach n_max + j_max")
    prods = table.products()
    scale = max(abs(float(p)) for p in prods)
    rep = SignReport()
    for n in range(n_max + 1):
        for j in range(j_max + 1):
            v = alternating_difference(prods, n, j)
            tol = 0 if table.exact else rel_tol * 2**n * scale
            rep.entries.append((n, j, v, tol, v >= -tol))
    return rep


def moment_via_mu_d1(k: int, n: int, z0: float, L: float, d: int = 1) -> float:
    """E[X_n^k] for d = 1 from the moment measure, uniform on [0, 1/(2L)]."""
    if d != 1:
        raise NotImplementedError("the moment measure is only known for d = 1")
    if k < 1 or n < 0:
        raise ValueError("need k >= 1 and n >= 0")
    pref = 1.0
    for i in range(k):
        pref *= z0 / float(coefficient_d1_exact(i, L))
    # Gauss-Legendre is exact for the degree k - 1 + n polynomial
    nodes, weights = np.polynomial.legendre.leggauss((k + n) // 2 + 1)
    b = 1.0 / (2 * L)
    x = 0.5 * b * (nodes + 1)
    integral = 0.5 * b * float(np.sum(weights * x ** (k - 1) * (1 - x * z0) ** n))
    return pref * 2 * L * integral


def moment_recurrence_residual(st: ChainStatistics, table: CoefficientTable, n: int, k: int):
    """Estimate E[X_n^k] - E[X_{n-1}^k] + c_k E[X_{n-1}^(k+1)] and its standard error.

    Uses per-trial values when available, so correlation between steps is
    accounted for; otherwise standard errors are combined as if independent.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ck = float(table[k])
    if st.paths is not None:
        a, b = st.paths[:, n], st.paths[:, n - 1]
        r = a**k - b**k + ck * b ** (k + 1)
        return float(r.mean()), float(r.std(ddof=1) / math.sqrt(len(r)))
    if k + 1 > st.K:
        raise ValueError("statistics lack moment k+1")
    m, s = st.moments, st.stderr
    resid = m[n, k - 1] - m[n - 1, k - 1] + ck * m[n - 1, k]
    se = math.sqrt(s[n, k - 1] ** 2 + s[n - 1, k - 1] ** 2 + (ck * s[n - 1, k]) ** 2)
    return float(resid), se


def chain_step_cdf(beta: float, x: float, d: int, L: float) -> float:
    """P(X_1 <= beta | X_0 = x) for beta < x."""
    if not 0 < beta < x:
        raise ValueError("need 0 < beta < x")
    return beta / (2 * L) * quad.kernel_ball_integral(beta / x, d)


# ---------------------------------------------------------------------------
# symmetric difference of two balls


def _sin_power_integral(theta: float, d: int) -> float:
    val, _ = integrate.quad(lambda t: math.sin(t) ** d, 0.0, theta, epsabs=0.0, epsrel=1e-13)
    return val


def symdiff_balls(r: float, s: float, d: int) -> float:
    """Volume of B_r symmetric-difference (x + B_r) with |x| = s (spherical caps)."""
    if s < 0:
        raise ValueError("separation must be nonnegative")
    full = unit_ball_volume(d) * r**d
    if s >= 2 * r:
        return 2 * full
    cap = unit_ball_volume(d - 1) * r**d * _sin_power_integral(math.acos(s / (2 * r)), d)
    return 2 * full - 4 * cap


def symdiff_stated(r: float, s: float, d: int) -> float:
    """The symmetric difference with cap coefficient r^(d-1) omega_d, as usually displayed."""
    theta = math.acos(min(s / (2 * r), 1.0))
    return 2 * (unit_ball_volume(d) * r**d - r ** (d - 1) * sphere_area(d) * _sin_power_integral(theta, d))


@dataclass(frozen=True)
class SlopeReport:
    finite_difference: float
    cap_formula: float  # 2 kappa_{d-1} r^(d-1)
    perimeter: float  # omega_d r^(d-1)


def symdiff_slope_at_zero(r: float, d: int, rel_step: float = 1e-4) -> SlopeReport:
    if not r > 0:
        raise ValueError("radius must be positive")
    h = r * rel_step
    f0, f1, f2 = (symdiff_balls(r, s, d) for s in (0.0, h, 2 * h))
    fd = (-3 * f0 + 4 * f1 - f2) / (2 * h)
    return SlopeReport(fd, 2 * unit_ball_volume(d - 1) * r ** (d - 1), sphere_area(d) * r ** (d - 1))


# ---------------------------------------------------------------------------
# comparison bounds and distribution tests


def min_uniform_cdf(x: float, t: float, L: float) -> float:
    """CDF at t of min(U, x), U uniform on [0, 2L]."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t >= x:
        return 1.0
    return min(t / (2 * L), 1.0)


def projected_mean_d1(z0: float, L: float, n: int) -> float:
    """E[min(z0, U_1..U_n)], the exact mean of the one-dimensional chain."""
    return 2 * L / (n + 1) * (1 - (1 - z0 / (2 * L)) ** (n + 1))


def sandwich_bounds(z0: float, L: float, d: int, table: CoefficientTable, n_max: int):
    """Lower and upper envelopes for E[X_n], n = 0..n_max.

    lower(n) = (1 - (1 - z0/4L)^(n+1)) / (n+1); upper(n) = 1 / (c_1 n), with
    upper(0) = z0.
    """
    n = np.arange(n_max + 1)
    lower = (1 - (1 - z0 / (4 * L)) ** (n + 1)) / (n + 1)
    c1 = float(table[1])
    upper = np.empty(n_max + 1)
    upper[0] = z0
    upper[1:] = 1.0 / (c1 * n[1:])
    return lower, upper


def sandwich_lower_negative_exponent(z0: float, L: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    return (1 - (1 - z0 / (4 * L)) ** (-(n + 1))) / (n + 1)


def ecdf(samples: np.ndarray, t) -> np.ndarray:
    s = np.sort(np.asarray(samples))
    return np.searchsorted(s, np.asarray(t, dtype=float), side="right") / s.size


def dkw_epsilon(n_samples: int, alpha: float) -> float:
    return math.sqrt(math.log(2 / alpha) / (2 * n_samples))


def domination_excess(lower: np.ndarray, upper: np.ndarray) -> float:
    """sup_t (F_lower(t) - F_upper(t)) over the pooled sample points.

    ``lower`` is expected to be stochastically larger, i.e. its CDF should
    not exceed that of ``upper``; a positive value measures the violation.
    """
    t = np.union1d(lower, upper)
    return float(np.max(ecdf(lower, t) - ecdf(upper, t)))


def exponential_limit_test(L: float, z0: float, n: int, trials: int, seed: int,
                           threads: int = 1) -> float:
    """KS distance between n X_n of the one-dimensional chain and Exp(mean 2L)."""
    st = simulate_chain([z0], min(z0, L - z0) / 2, L, n, trials, seed, K=1,
                        keep_paths=False, threads=threads)
    return float(stats.kstest(n * st.final, stats.expon(scale=2 * L).cdf).statistic)
