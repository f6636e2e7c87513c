"""Points, hyperplane reflections and the random reflection measure.

A reflection that does not fix the origin is encoded by its pole, the image
of the origin. Its mirror is the perpendicular bisector of 0 and the pole,
and the open half-space containing the origin is the ``PLUS`` side.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TOL = 1e-12

# Trials are grouped into fixed-size blocks, one RNG stream per block, so a
# run is reproducible regardless of how blocks are scheduled.
BLOCK_SIZE = 4096


class Side(enum.IntEnum):
    PLUS = 1
    BOUNDARY = 0
    MINUS = -1


def unit_ball_volume(d: int) -> float:
    """kappa_d, the volume of the unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """omega_d, the surface area of the unit sphere in R^d (omega_d = d kappa_d)."""
    return d * unit_ball_volume(d)


def as_point(x) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1:
        raise ValueError(f"point must be one-dimensional, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite coordinates")
    return p


@dataclass(frozen=True)
class Reflection:
    """Reflection across the hyperplane {x : <x, pole> = |pole|^2 / 2}."""

    pole: np.ndarray = field(repr=False)

    def __post_init__(self):
        pole = as_point(self.pole)
        pole.flags.writeable = False
        object.__setattr__(self, "pole", pole)
        if not np.any(pole):
            raise ValueError("pole must differ from the origin")

    @property
    def dim(self) -> int:
        return self.pole.shape[0]

    @property
    def normal(self) -> np.ndarray:
        return self.pole / np.linalg.norm(self.pole)

    @property
    def offset(self) -> float:
        """Distance from the origin to the mirror."""
        return 0.5 * float(np.linalg.norm(self.pole))

    def signed_distance(self, x) -> np.ndarray:
        """Signed distance to the mirror, negative on the origin side.

        Accepts a single point or an ``(..., d)`` array of points.
        """
        x = np.asarray(x, dtype=float)
        return x @ self.normal - self.offset

    def __call__(self, x) -> np.ndarray:
        return reflect(self, x)

    def __repr__(self):
        return f"Reflection(pole={self.pole.tolist()})"


def reflection_from_pole(pole) -> Reflection:
    return Reflection(as_point(pole))


def reflect(r: Reflection, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    dist = r.signed_distance(x)
    return x - 2.0 * np.multiply.outer(dist, r.normal)


def classify(r: Reflection, x) -> Side:
    dist = float(r.signed_distance(as_point(x)))
    if abs(dist) <= BOUNDARY_TOL:
        return Side.BOUNDARY
    return Side.PLUS if dist < 0 else Side.MINUS


def classify_many(r: Reflection, x) -> np.ndarray:
    """Vectorised :func:`classify`; returns an int array of ``Side`` values."""
    dist = r.signed_distance(x)
    out = np.where(dist < 0, int(Side.PLUS), int(Side.MINUS))
    out[np.abs(dist) <= BOUNDARY_TOL] = int(Side.BOUNDARY)
    return out


def pole_of_mapping(x, y) -> np.ndarray:
    """Pole of the reflection taking x to y, i.e. T_x(y) = sigma_{x,y}(0)."""
    x, y = as_point(x), as_point(y)
    diff = y - x
    nrm2 = float(diff @ diff)
    if nrm2 == 0.0:
        raise ValueError("x and y must be distinct")
    return (float(y @ y - x @ x) / nrm2) * diff


def reflection_mapping(x, y) -> Reflection:
    """The unique reflection sending x to y.

    Raises ValueError when x == y, or when |x| == |y| (the mirror then passes
    through the origin, which is not an admissible reflection).
    """
    return Reflection(pole_of_mapping(x, y))


def jacobian_factor(x, y) -> float:
    """(|T_x(y)| / |x - y|)^(d-1), the Jacobian of y -> T_x(y)."""
    x, y = as_point(x), as_point(y)
    t = pole_of_mapping(x, y)
    d = x.shape[0]
    return (np.linalg.norm(t) / np.linalg.norm(x - y)) ** (d - 1)


@dataclass(frozen=True)
class RngStream:
    """Deterministic generator keyed by (master seed, stream index)."""

    seed: int
    index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.index,))
        return np.random.Generator(np.random.PCG64(ss))


def block_streams(seed: int, trials: int, block_size: int = BLOCK_SIZE):
    """Yield ``(stream, start, stop)`` covering ``range(trials)`` in blocks."""
    for index, start in enumerate(range(0, trials, block_size)):
        yield RngStream(seed, index), start, min(start + block_size, trials)


def sample_poles(L: float, d: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` poles from the density (2 L omega_d)^-1 |x|^-(d-1) on B_2L.

    Radius uniform on (0, 2L], direction from a normalised Gaussian. Draw
    order is fixed: radii first, then directions.
    """
    if not L > 0:
        raise ValueError(f"support radius L must be positive, got {L}")
    radius = 2.0 * L * (1.0 - rng.random(size))
    g = rng.standard_normal((size, d))
    norms = np.linalg.norm(g, axis=1)
    # a zero Gaussian vector has probability zero; redraw to stay well defined
    while np.any(norms == 0):
        bad = norms == 0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None] * radius[:, None]


def sample_reflection(L: float, d: int, rng) -> Reflection:
    if isinstance(rng, RngStream):
        rng = rng.generator()
    return Reflection(sample_poles(L, d, 1, rng)[0])


def reflect_many(poles: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reflect each row of ``x`` across the mirror of the matching pole row."""
    p2 = np.einsum("ij,ij->i", poles, poles)
    dot = np.einsum("ij,ij->i", x, poles)
    return x - ((2.0 * dot - p2) / p2)[:, None] * poles
