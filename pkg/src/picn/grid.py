"""Uniform grids, finite-difference kernels and valid-mode stencil application.

Fields are plain ``float64`` arrays of shape ``(ny, nx)``; row ``i`` runs along
+y and column ``j`` along +x.  A 1D problem is a grid with a single row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAPLACE = "laplace"


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2:
            raise ValueError(f"nx must be >= 2, got {self.nx}")
        if self.ny < 1:
            raise ValueError(f"ny must be >= 1, got {self.ny}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.ny > 1 and not self.y_max > self.y_min:
            raise ValueError("y_max must exceed y_min when ny > 1")

    @classmethod
    def line(cls, x_min: float, x_max: float, nx: int) -> "GridSpec":
        return cls(float(x_min), float(x_max), 0.0, 0.0, int(nx), 1)

    @classmethod
    def from_spacing(cls, x_min, x_max, y_min, y_max, spacing: float) -> "GridSpec":
        """Grid anchored at ``(x_min, y_min)`` with the given spacing.

        The node count is rounded up so the grid covers the requested box; the
        max edges are moved outward to keep the spacing exact.
        """
        nx = int(np.ceil((x_max - x_min) / spacing - 1e-9)) + 1
        ny = int(np.ceil((y_max - y_min) / spacing - 1e-9)) + 1
        return cls(float(x_min), float(x_min + (nx - 1) * spacing),
                   float(y_min), float(y_min + (ny - 1) * spacing), nx, ny)

    @property
    def is_1d(self) -> bool:
        return self.ny == 1

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return 0.0 if self.ny == 1 else (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + np.arange(self.nx) * self.dx

    @property
    def y(self) -> np.ndarray:
        return self.y_min + np.arange(self.ny) * self.dy

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.x_min + j * self.dx, self.y_min + i * self.dy)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(ny, nx)`` arrays."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def trimmed(self, margin_y: int, margin_x: int) -> "GridSpec":
        """The sub-grid left after dropping ``margin`` nodes on each side."""
        nx = self.nx - 2 * margin_x
        ny = self.ny - 2 * margin_y
        if nx < 2 or ny < 1:
            raise ValueError(f"grid {self.shape} too small for margins ({margin_y}, {margin_x})")
        x0 = self.x_min + margin_x * self.dx
        y0 = self.y_min + margin_y * self.dy
        return GridSpec(x0, x0 + (nx - 1) * self.dx, y0, y0 + (ny - 1) * self.dy, nx, ny)


@dataclass(frozen=True)
class StencilKernel:
    coeffs: np.ndarray
    order_x: int = 0
    order_y: int = 0
    truncation_order: int = 2
    name: str = field(default="", compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] % 2 == 0 or c.shape[1] % 2 == 0:
            raise ValueError(f"kernel shape must be odd in both dims, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape

    def embedded(self, shape: tuple[int, int]) -> "StencilKernel":
        """Zero-pad symmetrically to a larger odd ``shape``."""
        p, q = self.shape
        P, Q = shape
        if P < p or Q < q or (P - p) % 2 or (Q - q) % 2:
            raise ValueError(f"cannot embed {self.shape} kernel in {shape}")
        out = np.zeros(shape)
        a, b = (P - p) // 2, (Q - q) // 2
        out[a:a + p, b:b + q] = self.coeffs
        return StencilKernel(out, self.order_x, self.order_y, self.truncation_order, self.name)


def delta_kernel(shape: tuple[int, int] = (1, 1)) -> StencilKernel:
    k = np.zeros(shape)
    k[shape[0] // 2, shape[1] // 2] = 1.0
    return StencilKernel(k, 0, 0, 0, "u")


def derivative_kernel(order, dx: float, dy: float | None = None) -> StencilKernel:
    """Second-order central-difference kernel for a derivative.

    ``order`` is one of ``(1, 0)``, ``(0, 1)``, ``(2, 0)``, ``(0, 2)``,
    ``(1, 1)`` or ``"laplace"``.  Pure x-derivatives come back as row kernels
    and pure y-derivatives as column kernels; use :meth:`StencilKernel.embedded`
    to bring a bank to a common footprint.
    """
    if dx <= 0 or (dy is not None and dy <= 0):
        raise ValueError("grid spacings must be positive")
    if isinstance(order, str):
        if order != LAPLACE:
            raise ValueError(f"unsupported derivative {order!r}")
        if dy is None:
            raise ValueError("laplace kernel needs a 2D grid")
        k = np.zeros((3, 3))
        k[1, :] += np.array([1.0, -2.0, 1.0]) / dx**2
        k[:, 1] += np.array([1.0, -2.0, 1.0]) / dy**2
        return StencilKernel(k, 2, 2, 2, LAPLACE)

    order = tuple(int(o) for o in order)
    if order[1] and dy is None:
        raise ValueError(f"derivative {order} needs a 2D grid")
    if order == (1, 0):
        return StencilKernel(np.array([[-1.0, 0.0, 1.0]]) / (2 * dx), 1, 0, 2, "u_x")
    if order == (0, 1):
        return StencilKernel(np.array([[-1.0], [0.0], [1.0]]) / (2 * dy), 0, 1, 2, "u_y")
    if order == (2, 0):
        return StencilKernel(np.array([[1.0, -2.0, 1.0]]) / dx**2, 2, 0, 2, "u_xx")
    if order == (0, 2):
        return StencilKernel(np.array([[1.0], [-2.0], [1.0]]) / dy**2, 0, 2, 2, "u_yy")
    if order == (1, 1):
        k = np.array([[1.0, 0.0, -1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 1.0]]) / (4 * dx * dy)
        return StencilKernel(k, 1, 1, 2, "u_xy")
    raise ValueError(
        f"unsupported derivative order {order}; expected one of "
        "(1,0), (0,1), (2,0), (0,2), (1,1) or 'laplace'"
    )


QUANTITY_ORDERS = {
    "u": (0, 0),
    "u_x": (1, 0),
    "u_y": (0, 1),
    "u_xx": (2, 0),
    "u_yy": (0, 2),
    "u_xy": (1, 1),
    "lap": LAPLACE,
}


def kernel_bank(grid: GridSpec, quantities) -> dict[str, StencilKernel]:
    """Kernels for named field quantities, all sharing one footprint.

    The footprint is 1x3 on a line grid and 3x3 otherwise, so every
    derivative field lands on the same valid interior.
    """
    shape = (1, 3) if grid.is_1d else (3, 3)
    dy = None if grid.is_1d else grid.dy
    bank = {}
    for name in quantities:
        if name not in QUANTITY_ORDERS:
            raise ValueError(f"unknown field quantity {name!r}")
        order = QUANTITY_ORDERS[name]
        k = delta_kernel() if order == (0, 0) else derivative_kernel(order, grid.dx, dy)
        bank[name] = k.embedded(shape)
    return bank


def interior_margin(grid: GridSpec) -> tuple[int, int]:
    return (0, 1) if grid.is_1d else (1, 1)


def _coeffs(kernel) -> np.ndarray:
    return kernel.coeffs if isinstance(kernel, StencilKernel) else np.asarray(kernel, dtype=np.float64)


def apply_stencil(field: np.ndarray, kernel) -> np.ndarray:
    """Valid-mode cross-correlation of ``field`` with ``kernel``.

    Output node ``(i, j)`` sits on input node ``(i + (p-1)/2, j + (q-1)/2)``.
    """
    k = _coeffs(kernel)
    f = np.asarray(field, dtype=np.float64)
    p, q = k.shape
    rows, cols = f.shape[0] - p + 1, f.shape[1] - q + 1
    if rows < 1 or cols < 1:
        raise ValueError(f"kernel {k.shape} larger than field {f.shape}")
    if rows * cols < p * q:
        # big "kernel", small output (weight gradients): loop over the output instead
        out = np.empty((rows, cols))
        for a in range(rows):
            for b in range(cols):
                out[a, b] = np.vdot(k, f[a:a + p, b:b + q])
        return out
    out = np.zeros((rows, cols))
    for a in range(p):
        for b in range(q):
            c = k[a, b]
            if c != 0.0:
                out += c * f[a:a + rows, b:b + cols]
    return out


def apply_stencil_transpose(grad_out: np.ndarray, kernel, full_rows: int, full_cols: int) -> np.ndarray:
    """Adjoint of :func:`apply_stencil` (full convolution with the flipped kernel)."""
    k = _coeffs(kernel)
    g = np.asarray(grad_out, dtype=np.float64)
    p, q = k.shape
    rows, cols = full_rows - p + 1, full_cols - q + 1
    if g.shape != (rows, cols):
        raise ValueError(
            f"grad_out shape {g.shape} does not match valid output {(rows, cols)} "
            f"of a {(full_rows, full_cols)} field with a {k.shape} kernel"
        )
    out = np.zeros((full_rows, full_cols))
    for a in range(p):
        for b in range(q):
            c = k[a, b]
            if c != 0.0:
                out[a:a + rows, b:b + cols] += c * g
    return out
