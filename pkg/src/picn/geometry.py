"""Domains, boundary sampling and bilinear interpolation onto a uniform grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import GridSpec

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box; ``y_min == y_max`` gives a 1D interval."""

    x_min: float
    x_max: float
    y_min: float = 0.0
    y_max: float = 0.0

    @property
    def is_1d(self) -> bool:
        return self.y_max == self.y_min

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


@dataclass(frozen=True)
class PolarDomain:
    """Star-shaped region ``{rho <= radius_fn(theta)}`` around the origin."""

    radius_fn: Callable[[np.ndarray], np.ndarray]
    name: str = "polar"

    def __post_init__(self):
        r = self.radius(np.linspace(0.0, 2 * np.pi, 4096, endpoint=False))
        if np.any(r <= 0):
            raise ValueError("radius function must be positive for every angle")

    def radius(self, theta) -> np.ndarray:
        return np.asarray(self.radius_fn(np.asarray(theta, dtype=np.float64)), dtype=np.float64)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        theta = np.linspace(0.0, 2 * np.pi, 20000, endpoint=False)
        r = self.radius(theta)
        x, y = r * np.cos(theta), r * np.sin(theta)
        return (float(x.min()), float(x.max()), float(y.min()), float(y.max()))


def star_domain() -> PolarDomain:
    return PolarDomain(lambda t: 1.0 + np.cos(4 * t) ** 2, "star")


def bird_domain() -> PolarDomain:
    return PolarDomain(
        lambda t: np.exp(np.sin(t)) * np.sin(3 * t) ** 2 + np.exp(np.cos(t)) * np.cos(3 * t) ** 2,
        "bird",
    )


def starfish_domain() -> PolarDomain:
    return PolarDomain(lambda t: 1.0 + 0.5 * np.cos(2.5 * t) ** 2, "starfish")


def inside(domain, x, y, tol: float = 1e-12):
    """Membership test; accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if isinstance(domain, Rectangle):
        res = ((x >= domain.x_min - tol) & (x <= domain.x_max + tol)
               & (y >= domain.y_min - tol) & (y <= domain.y_max + tol))
    else:
        rho = np.hypot(x, y)
        theta = np.arctan2(y, x)
        res = (rho == 0.0) | (rho <= domain.radius(theta) + tol)
    return bool(res) if res.ndim == 0 else res


@dataclass(frozen=True)
class BoundarySample:
    x: float
    y: float
    normal: tuple[float, float]
    bc_kind: str
    target: tuple[float, ...]


def _default_assignment(x, y, normal):
    return DIRICHLET, 0.0


def _as_sample(x, y, normal, bc_assignment):
    res = bc_assignment(x, y, normal)
    if res is None:
        return None
    kind, target = res
    if kind not in (DIRICHLET, NEUMANN):
        raise ValueError(f"unknown boundary condition kind {kind!r}")
    target = tuple(float(t) for t in np.atleast_1d(target))
    return BoundarySample(float(x), float(y), (float(normal[0]), float(normal[1])), kind, target)


def _rectangle_points(rect: Rectangle, count: int):
    if rect.is_1d:
        return [(rect.x_min, rect.y_min, (-1.0, 0.0)), (rect.x_max, rect.y_min, (1.0, 0.0))]
    w, h = rect.x_max - rect.x_min, rect.y_max - rect.y_min
    perimeter = 2 * (w + h)
    pts = []
    for k in range(count):
        s = k * perimeter / count
        if s < w:
            pts.append((rect.x_min + s, rect.y_min, (0.0, -1.0)))
        elif s < w + h:
            pts.append((rect.x_max, rect.y_min + (s - w), (1.0, 0.0)))
        elif s < 2 * w + h:
            pts.append((rect.x_max - (s - w - h), rect.y_max, (0.0, 1.0)))
        else:
            pts.append((rect.x_min, rect.y_max - (s - 2 * w - h), (-1.0, 0.0)))
    return pts


def polar_boundary(domain: PolarDomain, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positions and outward unit normals on the curve at angles ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    step = 1e-6
    rho = domain.radius(theta)
    drho = (domain.radius(theta + step) - domain.radius(theta - step)) / (2 * step)
    c, s = np.cos(theta), np.sin(theta)
    tx = drho * c - rho * s
    ty = drho * s + rho * c
    # tangent rotated by -90 degrees; outward for a counter-clockwise curve
    nx, ny = ty, -tx
    norm = np.hypot(nx, ny)
    nx, ny = nx / norm, ny / norm
    flip = nx * c + ny * s < 0
    nx[flip], ny[flip] = -nx[flip], -ny[flip]
    return np.stack([rho * c, rho * s]), np.stack([nx, ny]), np.stack([tx, ty])


def boundary_samples(domain, count: int, bc_assignment=None) -> list[BoundarySample]:
    """Boundary points with outward normals and their condition.

    Polar domains use equally spaced angles; rectangles use equal arc-length
    spacing starting at the lower-left corner.  ``bc_assignment(x, y, normal)``
    returns ``(kind, target)`` or ``None`` to drop the point.
    """
    if count < 1:
        raise ValueError(f"need at least one boundary sample, got {count}")
    bc_assignment = bc_assignment or _default_assignment
    if isinstance(domain, Rectangle):
        raw = _rectangle_points(domain, count)
    else:
        theta = 2 * np.pi * np.arange(count) / count
        pos, nrm, _ = polar_boundary(domain, theta)
        raw = [(pos[0, k], pos[1, k], (nrm[0, k], nrm[1, k])) for k in range(count)]
    out = []
    for x, y, n in raw:
        sample = _as_sample(x, y, n, bc_assignment)
        if sample is not None:
            out.append(sample)
    return out


@dataclass(frozen=True)
class InterpStencil:
    """Bilinear weights of the four nodes around one point (or many, as arrays)."""

    i: np.ndarray
    j: np.ndarray
    i1: np.ndarray
    j1: np.ndarray
    w00: np.ndarray
    w01: np.ndarray
    w10: np.ndarray
    w11: np.ndarray

    @property
    def size(self) -> int:
        return int(np.size(self.w00))

    def weights(self) -> np.ndarray:
        return np.stack([self.w00, self.w01, self.w10, self.w11])


def _cell(coord, lo, step, n, tol, axis, clamp):
    t = (coord - lo) / step
    span = n - 1
    if not clamp and (np.any(t < -tol / step) or np.any(t > span + tol / step)):
        raise ValueError(f"point outside the grid along {axis}")
    t = np.clip(t, 0.0, span)
    r = np.round(t)
    t = np.where(np.abs(t - r) < 1e-9, r, t)
    k = np.minimum(np.floor(t), span - 1).astype(np.int64)
    return k, t - k


def interp_stencil(grid: GridSpec, x, y, clamp: bool = False) -> InterpStencil:
    """Bilinear stencil for point(s) ``(x, y)`` on ``grid``.

    The lower node is the nearest one at or below the point on each axis;
    points on the max edges fall in the last cell.  With ``clamp`` the point
    is first projected onto the grid rectangle instead of raising.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tol = 1e-9
    j, tx = _cell(x, grid.x_min, grid.dx, grid.nx, tol, "x", clamp)
    if grid.is_1d:
        if not clamp and np.any(np.abs(y - grid.y_min) > tol):
            raise ValueError("point off the line grid")
        i = np.zeros_like(j)
        ty = np.zeros_like(tx)
        i1 = i
    else:
        i, ty = _cell(y, grid.y_min, grid.dy, grid.ny, tol, "y", clamp)
        i1 = i + 1
    return InterpStencil(
        i, j, i1, j + 1,
        (1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty,
    )


def interp_apply(field: np.ndarray, stencil: InterpStencil):
    s = stencil
    rows, cols = field.shape
    if (np.any(s.i1 >= rows) or np.any(s.j1 >= cols)
            or np.any(s.i < 0) or np.any(s.j < 0)):
        raise IndexError(f"stencil indices outside a {field.shape} field")
    return (s.w00 * field[s.i, s.j] + s.w01 * field[s.i, s.j1]
            + s.w10 * field[s.i1, s.j] + s.w11 * field[s.i1, s.j1])


def interp_backward(stencil: InterpStencil, upstream, shape) -> np.ndarray:
    """Scatter ``upstream * weight`` onto the four nodes (adjoint of interp_apply)."""
    s = stencil
    g = np.zeros(shape)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), np.shape(s.w00))
    np.add.at(g, (s.i, s.j), up * s.w00)
    np.add.at(g, (s.i, s.j1), up * s.w01)
    np.add.at(g, (s.i1, s.j), up * s.w10)
    np.add.at(g, (s.i1, s.j1), up * s.w11)
    return g
