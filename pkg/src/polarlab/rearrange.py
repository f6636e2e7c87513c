"""Grid-sampled functions, polarization and Schwarz symmetrization.

A :class:`GridFunction` stores one nonnegative value per cell of a uniform
lattice over ``[-H, H]^d``; the value stands for the function at the cell
centre. Polarization reads ``f(sigma(x))`` from the cell containing
``sigma(x)`` (cells outside the grid read as zero), so thresholding commutes
with it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

from .geom import BOUNDARY_TOL, Reflection, as_point, sphere_area, unit_ball_volume


@dataclass(frozen=True, eq=False)
class GridFunction:
    d: int
    H: float
    m: int
    values: np.ndarray

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if not self.H > 0 or self.m < 1:
            raise ValueError("need H > 0 and m >= 1")
        vals = np.array(self.values, dtype=float).reshape((self.m,) * self.d)
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("grid values must be finite and nonnegative")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def h(self) -> float:
        return 2.0 * self.H / self.m

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def mass(self) -> float:
        return float(self.values.sum()) * self.cell_volume

    @property
    def sup(self) -> float:
        return float(self.values.max())

    def centers(self) -> np.ndarray:
        """Cell centres as an ``(m^d, d)`` array in row-major order."""
        return cell_centers(self.d, self.H, self.m)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.d, self.H, self.m, values)

    def same_grid(self, other: "GridFunction") -> bool:
        return (self.d, self.m) == (other.d, other.m) and math.isclose(self.H, other.H)

    def support_radius(self) -> float:
        """Largest distance from the origin of a cell centre with positive value."""
        flat = self.values.ravel()
        if not np.any(flat > 0):
            return 0.0
        return float(np.linalg.norm(self.centers()[flat > 0], axis=1).max())

    def check_support(self, L: float) -> None:
        if L > self.H * (1 + 1e-12):
            raise ValueError(f"support radius L={L} exceeds grid half-width H={self.H}")
        if self.support_radius() >= L:
            raise ValueError(f"support of f is not contained in the ball of radius {L}")

    def __eq__(self, other):
        return (
            isinstance(other, GridFunction)
            and self.same_grid(other)
            and np.array_equal(self.values, other.values)
        )


def cell_centers(d: int, H: float, m: int) -> np.ndarray:
    h = 2.0 * H / m
    axis = -H + (np.arange(m) + 0.5) * h
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _doubled_offsets(d: int, m: int) -> np.ndarray:
    # 2 * centre / h as exact integers: 2i + 1 - m per axis
    axis = 2 * np.arange(m, dtype=np.int64) + 1 - m
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


@numba.njit(cache=True, nogil=True)
def _polarize_kernel(src, dst, xs, m, H, pole, tol):
    # src/dst: flat row-major values; xs: (m**d, d) cell centres
    d = xs.shape[1]
    inv_h = m / (2.0 * H)
    p2 = 0.0
    for k in range(d):
        p2 += pole[k] * pole[k]
    pn = math.sqrt(p2)
    half = 0.5 * pn
    for i in range(src.shape[0]):
        dot = 0.0
        for k in range(d):
            dot += xs[i, k] * pole[k]
        dist = dot / pn - half
        if abs(dist) <= tol:
            dst[i] = src[i]
            continue
        scale = 2.0 * dist / pn
        j = 0
        inside = True
        for k in range(d):
            idx = int(math.floor((xs[i, k] - scale * pole[k] + H) * inv_h))
            if idx < 0 or idx >= m:
                inside = False
                break
            j = j * m + idx
        other = src[j] if inside else 0.0
        if dist < 0:
            dst[i] = max(src[i], other)
        else:
            dst[i] = min(src[i], other)


def polarize_flat(src: np.ndarray, dst: np.ndarray, d: int, m: int, H: float, pole) -> None:
    """Low-level polarization of a flat value buffer into ``dst``."""
    _polarize_kernel(src, dst, cell_centers(d, H, m), m, float(H),
                     np.asarray(pole, dtype=float), BOUNDARY_TOL)


def snap_pole(pole, h: float) -> np.ndarray:
    """Round a one-dimensional pole to a multiple of h.

    The mirror then sits on a cell centre or cell face, so reflection maps
    cells onto cells and polarization preserves mass exactly.
    """
    p = as_point(pole)
    snapped = np.round(p / h) * h
    if snapped[0] == 0.0:
        snapped[0] = math.copysign(h, p[0]) if p[0] != 0 else h
    return snapped


def polarize(f: GridFunction, r: Reflection) -> GridFunction:
    if r.dim != f.d:
        raise ValueError(f"reflection dimension {r.dim} does not match grid dimension {f.d}")
    src = np.ascontiguousarray(f.values.ravel())
    dst = np.empty_like(src)
    polarize_flat(src, dst, f.d, f.m, f.H, r.pole)
    return f.with_values(dst)


def schwarz_order(d: int, m: int) -> np.ndarray:
    """Cell indices sorted by distance from the origin, ties lexicographic."""
    off = _doubled_offsets(d, m)
    r2 = (off * off).sum(axis=1)
    keys = [off[:, k] for k in range(d - 1, -1, -1)] + [r2]
    return np.lexsort(keys)


def schwarz(f: GridFunction) -> GridFunction:
    """Discrete symmetric decreasing rearrangement (same multiset of values)."""
    flat = f.values.ravel()
    order = schwarz_order(f.d, f.m)
    out = np.empty_like(flat)
    out[order] = np.sort(flat)[::-1]
    return f.with_values(out)


def l1_distance(f: GridFunction, g: GridFunction) -> float:
    if not f.same_grid(g):
        raise ValueError("grid geometries differ")
    return float(np.abs(f.values - g.values).sum()) * f.cell_volume


@dataclass(frozen=True)
class LevelProfile:
    d: int
    thresholds: np.ndarray
    measure: np.ndarray
    radius: np.ndarray

    @property
    def kappa(self) -> float:
        return unit_ball_volume(self.d)

    @property
    def omega(self) -> float:
        return sphere_area(self.d)

    def perimeters(self) -> np.ndarray:
        """Perimeter of {f > t}^*, zero where the level set is empty."""
        per = self.omega * self.radius ** (self.d - 1)
        return np.where(self.measure > 0, per, 0.0)


def level_profile(f: GridFunction, thresholds: Sequence[float]) -> LevelProfile:
    t = np.asarray(thresholds, dtype=float)
    if t.ndim != 1 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be a strictly increasing list of nonnegative reals")
    vals = np.sort(f.values.ravel())
    above = vals.size - np.searchsorted(vals, t, side="right")
    meas = above * f.cell_volume
    radius = (meas / unit_ball_volume(f.d)) ** (1.0 / f.d)
    return LevelProfile(f.d, t, meas, radius)


def default_thresholds(f: GridFunction, count: int = 2049) -> np.ndarray:
    top = f.sup
    if top == 0:
        return np.array([0.0, 1.0])
    return np.linspace(0.0, top, count)


def perimeter_integral(f: GridFunction, thresholds: Sequence[float] | None = None) -> float:
    """Trapezoid integral over t of the perimeter of the ball {f > t}^*."""
    if thresholds is None:
        thresholds = default_thresholds(f)
    prof = level_profile(f, thresholds)
    return float(np.trapezoid(prof.perimeters(), prof.thresholds))


def indicator_ball(d: int, H: float, m: int, center, radius: float) -> GridFunction:
    c = as_point(center)
    if c.shape[0] != d:
        raise ValueError("centre dimension mismatch")
    pts = cell_centers(d, H, m)
    vals = (np.linalg.norm(pts - c, axis=1) < radius).astype(float)
    return GridFunction(d, H, m, vals)


def radial_bump(
    d: int,
    H: float,
    m: int,
    center,
    radius: float,
    profile: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GridFunction:
    """``profile(|x - center| / radius)`` inside the ball, zero outside.

    ``profile`` must be nonincreasing on [0, 1); the default is the cone
    ``1 - s``.
    """
    c = as_point(center)
    pts = cell_centers(d, H, m)
    s = np.linalg.norm(pts - c, axis=1) / radius
    prof = profile if profile is not None else (lambda u: 1.0 - u)
    vals = np.where(s < 1.0, prof(np.minimum(s, 1.0)), 0.0)
    return GridFunction(d, H, m, np.maximum(vals, 0.0))


def indicator_interval(H: float, m: int, a: float, b: float) -> GridFunction:
    pts = cell_centers(1, H, m)[:, 0]
    return GridFunction(1, H, m, ((pts > a) & (pts < b)).astype(float))


def to_csv(f: GridFunction, path) -> None:
    lines = [f"{f.d},{f.H!r},{f.m}"]
    lines.extend(repr(float(v)) for v in f.values.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


class GridParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def from_csv(path) -> GridFunction:
    text = Path(path).read_text().splitlines()
    if not text:
        raise GridParseError(1, "empty file")
    parts = [p.strip() for p in text[0].split(",")]
    if len(parts) != 3:
        raise GridParseError(1, "header must be 'd,H,m'")
    try:
        d, H, m = int(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise GridParseError(1, f"bad header: {exc}") from None
    if d < 1 or m < 1 or not H > 0:
        raise GridParseError(1, "header values out of range")
    n = m**d
    body = [(i + 2, s.strip()) for i, s in enumerate(text[1:]) if s.strip()]
    if len(body) != n:
        lineno = body[n][0] if len(body) > n else len(text) + 1
        raise GridParseError(lineno, f"expected {n} cell values, found {len(body)}")
    vals = np.empty(n)
    for k, (lineno, s) in enumerate(body):
        try:
            v = float(s)
        except ValueError:
            raise GridParseError(lineno, f"not a number: {s!r}") from None
        if not math.isfinite(v) or v < 0:
            raise GridParseError(lineno, f"value must be finite and nonnegative: {s!r}")
        vals[k] = v
    return GridFunction(d, H, m, vals)
