"""Quadrature for integrals against the singular kernel |x - y|^-(d-1).

Two reductions are used:

* polar coordinates centred at the singular point ``u`` on the sphere,
  ``y = u + s w``. The Jacobian ``s^(d-1)`` cancels the kernel, leaving a
  smooth integral over the chord ``0 < s < 2 cos(alpha)``;
* radial shells ``|y| = rho`` weighted by the sphere average of the kernel
  (:func:`sphere_average_kernel`), which carries a log singularity at
  ``rho = 1`` in d >= 2.

Monte Carlo estimators built on random reflections (``*_mc``) are provided
as independent cross-checks; they only use :mod:`polarlab.geom`.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import mpmath
import numpy as np
from scipy import integrate

from . import geom
from .geom import sphere_area, unit_ball_volume

RTOL_1D = 1e-10
RTOL_2D = 1e-10


def _check_dim(d: int) -> None:
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d}")


def sphere_average_kernel(rho: float, d: int, epsrel: float = RTOL_1D) -> float:
    """Average of |u - y|^-(d-1) over the sphere |y| = rho, |u| = 1."""
    _check_dim(d)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if d == 1 or rho == 0:
        return 1.0
    if rho == 1.0:
        raise ValueError("the kernel average diverges on the singular ring rho = 1")
    p = (d - 1) / 2.0
    gap = (1.0 - rho) ** 2

    def integrand(theta):
        return math.sin(theta) ** (d - 2) * (gap + 4 * rho * math.sin(theta / 2) ** 2) ** (-p)

    # the integrand peaks in a layer of width ~|1 - rho| around theta = 0
    width = abs(1.0 - rho)
    points = sorted({min(width * k, math.pi / 2) for k in (0.5, 2.0, 8.0, 32.0)})
    val, _ = integrate.quad(integrand, 0.0, math.pi, points=points, epsabs=0.0,
                            epsrel=epsrel, limit=400)
    return sphere_area(d - 1) / sphere_area(d) * val


def kernel_ball_integral(lam: float, d: int, epsrel: float = RTOL_1D) -> float:
    """(omega_d lam)^-1 times the kernel integral over B_lam, by radial shells."""
    _check_dim(d)
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    if d == 1:
        return 1.0
    val, _ = integrate.quad(lambda r: r ** (d - 1) * sphere_average_kernel(r, d, epsrel),
                            0.0, lam, epsabs=0.0, epsrel=epsrel, limit=400)
    return val / lam


def polar_ball_integral(
    g: Callable[[float], float], d: int, radius: float = 1.0, epsrel: float = RTOL_2D
) -> float:
    """Integral of g(|y|) |x - y|^-(d-1) over |y| < radius, for |x| = radius."""
    _check_dim(d)
    R = float(radius)
    if d == 1:
        # chord from x = R through the interval (-R, R); kernel is 1
        val, _ = integrate.quad(lambda s: g(abs(R - s)), 0.0, 2 * R, points=[R],
                                epsabs=0.0, epsrel=epsrel, limit=200)
        return val

    def chord(alpha):
        c, sn = math.cos(alpha), math.sin(alpha)

        def f(v):
            # |y| at s = 2 R c v, in a cancellation-free form
            return g(R * math.hypot(sn, c * (1 - 2 * v)))

        # symmetric about the chord midpoint, where |y| = R sin(alpha) has a
        # kink as alpha -> 0; keep the kink at an endpoint
        val, _ = integrate.quad(f, 0.0, 0.5, epsabs=1e-15, epsrel=epsrel, limit=200)
        return sn ** (d - 2) * 4 * R * c * val

    val, _ = integrate.quad(chord, 0.0, math.pi / 2, points=[1e-3, 1e-2, 1e-1], epsabs=0.0,
                            epsrel=epsrel, limit=200)
    return sphere_area(d - 1) * val


@lru_cache(maxsize=None)
def eta(d: int) -> float:
    """Average of |u - y|^-(d-1) over the unit ball."""
    _check_dim(d)
    return polar_ball_integral(lambda r: 1.0, d) / unit_ball_volume(d)


def eta_closed_form(d: int) -> float:
    _check_dim(d)
    if d == 1:
        return 1.0
    return 2 * sphere_area(d - 1) / ((d - 1) * unit_ball_volume(d))


@lru_cache(maxsize=None)
def ck_integral(k: int, d: int) -> float:
    """Integral of (1 - |y|^k) |u - y|^-(d-1) over the unit ball."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return 0.0
    return polar_ball_integral(lambda r: 1.0 - r**k, d)


def ck_integral_radial(k: int, d: int) -> float:
    """Same integral as :func:`ck_integral` through radial shells."""
    _check_dim(d)
    if k == 0:
        return 0.0
    if d == 1:
        return 2 * k / (k + 1)
    val, _ = integrate.quad(
        lambda r: (1 - r**k) * r ** (d - 1) * sphere_average_kernel(r, d),
        0.0, 1.0, epsabs=0.0, epsrel=RTOL_1D, limit=400,
    )
    return sphere_area(d) * val


@lru_cache(maxsize=None)
def ck_integral_mp(k: int, d: int, dps: int = 30) -> mpmath.mpf:
    """High-precision :func:`ck_integral` (tanh-sinh on the polar form)."""
    _check_dim(d)
    if k == 0:
        return mpmath.mpf(0)
    with mpmath.workdps(dps):
        if d == 1:
            return mpmath.mpf(2 * k) / (k + 1)

        def f(alpha, v):
            c = mpmath.cos(alpha)
            s = 2 * c * v
            rad2 = 1 - 2 * s * c + s * s
            return mpmath.sin(alpha) ** (d - 2) * (1 - rad2 ** (mpmath.mpf(k) / 2)) * 2 * c

        val = mpmath.quad(f, [0, mpmath.pi / 4, mpmath.pi / 2], [0, 0.5, 1])
        area = 2 * mpmath.pi ** (mpmath.mpf(d - 1) / 2) / mpmath.gamma(mpmath.mpf(d - 1) / 2)
        return +(area * val)


def ball_potential(rho: float, d: int, epsrel: float = RTOL_1D) -> float:
    """Integral of |x - y|^-(d-1) over the unit ball, for |x| = rho <= 1.

    From the chord length along each direction; the odd part of the chord
    integrates to zero, leaving sqrt(1 - rho^2 sin^2 theta).
    """
    _check_dim(d)
    if d == 1:
        return (1.0 - rho) + (1.0 + rho)
    val, _ = integrate.quad(
        lambda th: math.sin(th) ** (d - 2) * math.sqrt(max(1 - (rho * math.sin(th)) ** 2, 0.0)),
        0.0, math.pi, epsabs=0.0, epsrel=epsrel, limit=200,
    )
    return sphere_area(d - 1) * val


@lru_cache(maxsize=None)
def gamma_const(d: int) -> float:
    """gamma_d = (omega_d kappa_d)^-1 times the kernel double integral over B_1 x B_1."""
    _check_dim(d)
    val, _ = integrate.quad(lambda r: r ** (d - 1) * ball_potential(r, d), 0.0, 1.0,
                            epsabs=0.0, epsrel=RTOL_1D, limit=200)
    return sphere_area(d) * val / (sphere_area(d) * unit_ball_volume(d))


def b_const(d: int) -> float:
    return 1.0 - gamma_const(d) / 2.0


def phi_n_eval(x, n: int, d: int, L: float) -> float:
    """(2 L omega_d)^-1 times the integral of |y|^n |x - y|^-(d-1) over |y| < |x|."""
    x = geom.as_point(x)
    a = float(np.linalg.norm(x))
    if a == 0:
        raise ValueError("x must be nonzero")
    if x.shape[0] != d:
        raise ValueError("dimension mismatch")
    return polar_ball_integral(lambda r: r**n, d, radius=a) / (2 * L * sphere_area(d))


# ---------------------------------------------------------------------------
# kernel sums on grids


def kernel_double_sum(a: np.ndarray, b: np.ndarray, h: float, d: int, chunk: int = 2048) -> float:
    """Midpoint approximation of the kernel double integral over two cell sets.

    ``a`` and ``b`` are ``(n, d)`` arrays of cell centres of side ``h``.
    Coincident centres use the kernel average over a ball of one cell volume,
    d * rho^(1-d), instead of the singular point value.
    """
    if len(a) == 0 or len(b) == 0:
        return 0.0
    w = h ** (2 * d)
    rho = (h**d / unit_ball_volume(d)) ** (1.0 / d)
    self_val = d * rho ** (1 - d)
    p = d - 1
    total = 0.0
    for start in range(0, len(a), chunk):
        blk = a[start:start + chunk]
        r2 = ((blk[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        same = r2 == 0
        if p == 0:
            k = np.ones_like(r2)
        else:
            k = np.where(same, self_val, np.power(np.where(same, 1.0, r2), -p / 2))
        total += float(k.sum())
    return total * w


def drop_double_integral(f, t: float, L: float, fstar=None) -> float:
    """(L omega_d)^-1 times the kernel double integral over A_0(t) x B_0(t).

    A_0(t) = {f > t >= f*}, B_0(t) = {f* > t >= f}, f* the Schwarz
    symmetrization of ``f``.
    """
    from .rearrange import schwarz

    if t < 0:
        raise ValueError("threshold must be nonnegative")
    fs = schwarz(f) if fstar is None else fstar
    v, vs = f.values.ravel(), fs.values.ravel()
    pts = f.centers()
    a = pts[(v > t) & (vs <= t)]
    b = pts[(vs > t) & (v <= t)]
    return kernel_double_sum(a, b, f.h, f.d) / (L * sphere_area(f.d))


# ---------------------------------------------------------------------------
# Monte Carlo oracles through random reflections


def _mean_mc(hit: Callable[[np.random.Generator, int], np.ndarray], samples: int, seed: int):
    total = 0.0
    total_sq = 0.0
    for stream, lo, hi in geom.block_streams(seed, samples, block_size=1 << 20):
        vals = hit(stream.generator(), hi - lo)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / max(samples - 1, 1))


def eta_mc(d: int, samples: int = 10**7, seed: int = 0) -> tuple[float, float]:
    """eta_d = 2 d P(|sigma(u)| < 1) for sigma drawn with L = 1."""
    u = np.zeros(d)
    u[0] = 1.0

    def hit(rng, n):
        poles = geom.sample_poles(1.0, d, n, rng)
        img = geom.reflect_many(poles, np.broadcast_to(u, (n, d)))
        return (np.einsum("ij,ij->i", img, img) < 1.0).astype(float)

    mean, se = _mean_mc(hit, samples, seed)
    return 2 * d * mean, 2 * d * se


def gamma_mc(d: int, samples: int = 10**7, seed: int = 0) -> tuple[float, float]:
    """gamma_d = 2 P(sigma(x) in B_1) for x uniform in B_1 and sigma drawn with L = 1."""

    def hit(rng, n):
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        x = g * (rng.random(n) ** (1.0 / d))[:, None]
        poles = geom.sample_poles(1.0, d, n, rng)
        img = geom.reflect_many(poles, x)
        return (np.einsum("ij,ij->i", img, img) < 1.0).astype(float)

    mean, se = _mean_mc(hit, samples, seed)
    return 2 * mean, 2 * se


def coefficient_mc(k: int, d: int, L: float, samples: int = 10**6, seed: int = 0):
    """c_k from one polarization step of a ball centred at distance L/2."""
    a = L / 2
    x0 = np.zeros(d)
    x0[0] = a

    def drop(rng, n):
        poles = geom.sample_poles(L, d, n, rng)
        x = np.broadcast_to(x0, (n, d))
        img = geom.reflect_many(poles, x)
        p2 = np.einsum("ij,ij->i", poles, poles)
        minus = np.einsum("ij,ij->i", x, poles) > p2 / 2
        r = np.where(minus, np.linalg.norm(img, axis=1), a)
        return (a**k - r**k) / a ** (k + 1)

    return _mean_mc(drop, samples, seed)
