"""Uniform node-centred grids and the discrete calculus shared by all solvers.

Fields are plain ``float64`` arrays of shape ``(nx, ny)``; ``f[i, j]`` is the
value at ``x = x0 + i*h``, ``y = y0 + j*h``.  Quadrature is trapezoidal, which
makes the mirror-ghost Neumann Laplacian self-adjoint with respect to
:func:`inner_h0`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cache
from typing import Iterable

import numpy as np
from scipy import fft

from .exceptions import ConvergenceError, GridMismatchError, NonFiniteError

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")

    @classmethod
    def unit_square(cls, n: int) -> "Grid2D":
        return cls(n, n, 1.0 / (n - 1))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, x0 + (self.nx - 1) * self.h, y0, y0 + (self.ny - 1) * self.h)

    @property
    def area(self) -> float:
        return (self.nx - 1) * (self.ny - 1) * self.h**2

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x0, y0 = self.origin
        x = x0 + self.h * np.arange(self.nx)
        y = y0 + self.h * np.arange(self.ny)
        return np.meshgrid(x, y, indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask

    def can_coarsen(self) -> bool:
        return (self.nx - 1) % 2 == 0 and (self.ny - 1) % 2 == 0 and self.nx >= 5 and self.ny >= 5

    def coarsen(self) -> "Grid2D":
        if not self.can_coarsen():
            raise ValueError(f"cannot coarsen a {self.nx}x{self.ny} grid by 2 (need odd node counts >= 5)")
        return Grid2D((self.nx - 1) // 2 + 1, (self.ny - 1) // 2 + 1, 2 * self.h, self.origin)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


def check_field(f: np.ndarray, grid: Grid2D, name: str = "field") -> np.ndarray:
    """Validate shape and finiteness; returns ``f`` as a float array."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise GridMismatchError(f"{name} has shape {f.shape}, grid is {grid.shape}")
    check_finite(f, name)
    return f


def check_finite(f: np.ndarray, name: str = "field", step: int | None = None) -> None:
    # a cheap sum catches the common case; locate the node only on failure
    if math.isfinite(float(np.sum(f))):
        return
    bad = np.argwhere(~np.isfinite(f))
    if len(bad) == 0:
        return  # overflow in the sum only
    idx = tuple(int(v) for v in bad[0])
    where = f" at step {step}" if step is not None else ""
    raise NonFiniteError(f"{name} is not finite at node {idx}{where}", index=idx, step=step)


@cache
def trapezoid_weights(grid: Grid2D) -> np.ndarray:
    """Node quadrature weights: h^2 interior, h^2/2 on edges, h^2/4 at corners."""
    wx = np.ones(grid.nx)
    wx[[0, -1]] = 0.5
    wy = np.ones(grid.ny)
    wy[[0, -1]] = 0.5
    w = grid.h**2 * np.outer(wx, wy)
    w.flags.writeable = False
    return w


@cache
def boundary_lift(grid: Grid2D) -> np.ndarray:
    """Ratio of full-boundary arc weight to node weight.

    Adding ``boundary_lift * g`` to the Neumann Laplacian realises the ghost
    closure for an outward normal derivative ``g`` (2/h on edges, 4/h at
    corners where both sides contribute).
    """
    arc = BoundarySet.full(grid).weights
    lift = arc / trapezoid_weights(grid)
    lift.flags.writeable = False
    return lift


def laplacian(f: np.ndarray, h: float, out: np.ndarray | None = None) -> np.ndarray:
    """Five-point Laplacian with mirror ghosts (homogeneous Neumann closure).

    Callers impose other boundary conditions by adding ``boundary_lift * g``
    for the outward normal derivative ``g``.
    """
    check_finite(f, "laplacian input")
    if out is None:
        out = np.empty_like(f)
    # built from edge differences so that constants map to exactly zero
    out[...] = 0.0
    dx = f[1:, :] - f[:-1, :]
    out[:-1, :] += dx
    out[1:, :] -= dx
    out[0, :] += dx[0, :]  # mirror ghost doubles the single edge
    out[-1, :] -= dx[-1, :]
    dy = f[:, 1:] - f[:, :-1]
    out[:, :-1] += dy
    out[:, 1:] -= dy
    out[:, 0] += dy[:, 0]
    out[:, -1] -= dy[:, -1]
    out *= 1.0 / (h * h)
    return out


def _same_grid(f, g):
    if np.shape(f) != np.shape(g):
        raise GridMismatchError(f"fields live on different grids: {np.shape(f)} vs {np.shape(g)}")


def inner_h0(f: np.ndarray, g: np.ndarray, grid: Grid2D) -> float:
    _same_grid(f, g)
    if np.shape(f) != grid.shape:
        raise GridMismatchError(f"field shape {np.shape(f)} does not match grid {grid.shape}")
    return float(np.sum(trapezoid_weights(grid) * f * g))


def norm_h0(f: np.ndarray, grid: Grid2D) -> float:
    return math.sqrt(max(inner_h0(f, f, grid), 0.0))


def gradient(f: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, first-order one-sided at the boundary."""
    return tuple(np.gradient(f, grid.h, edge_order=1))


def inner_h1(f: np.ndarray, g: np.ndarray, grid: Grid2D) -> float:
    fx, fy = gradient(f, grid)
    if f is g:
        gx, gy = fx, fy
    else:
        gx, gy = gradient(g, grid)
    w = trapezoid_weights(grid)
    return float(np.sum(w * (f * g + fx * gx + fy * gy)))


def norm_h1(f: np.ndarray, grid: Grid2D) -> float:
    return math.sqrt(max(inner_h1(f, f, grid), 0.0))


def dirichlet_form(f: np.ndarray, g: np.ndarray) -> float:
    """Edge-based discretisation of the integral of grad f . grad g.

    Equals ``-inner_h0(f, laplacian(g))`` exactly, so it is the stiffness form
    paired with the Neumann Laplacian.  Edges lying on the boundary carry half
    weight.
    """
    _same_grid(f, g)
    dfx = f[1:, :] - f[:-1, :]
    dgx = g[1:, :] - g[:-1, :]
    ex = dfx * dgx
    sx = ex[:, 1:-1].sum() + 0.5 * (ex[:, 0].sum() + ex[:, -1].sum())
    dfy = f[:, 1:] - f[:, :-1]
    dgy = g[:, 1:] - g[:, :-1]
    ey = dfy * dgy
    sy = ey[1:-1, :].sum() + 0.5 * (ey[0, :].sum() + ey[-1, :].sum())
    return float(sx + sy)


# --------------------------------------------------------------------------
# boundary portions


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """A portion of the boundary with arc-length quadrature weights.

    ``weights`` is a full-grid array, zero off the portion.  A node gets h/2
    for every boundary edge incident to it whose two end nodes are both
    selected, so one full side of the unit square sums to exactly 1.
    """

    grid: Grid2D
    mask: np.ndarray
    weights: np.ndarray = field(repr=False)

    @classmethod
    def from_mask(cls, grid: Grid2D, mask: np.ndarray) -> "BoundarySet":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.shape:
            raise GridMismatchError(f"mask shape {mask.shape} does not match grid {grid.shape}")
        if np.any(mask & ~grid.boundary_mask()):
            i, j = np.argwhere(mask & ~grid.boundary_mask())[0]
            raise ValueError(f"node ({i}, {j}) is flagged but is not a boundary node")
        w = np.zeros(grid.shape)
        half = 0.5 * grid.h
        for line in _boundary_lines(grid):
            m = mask[line]
            both = m[:-1] & m[1:]
            seg = np.zeros(m.shape)
            seg[:-1] += both * half
            seg[1:] += both * half
            w[line] += seg
        if np.any(mask & (w <= 0)):
            i, j = np.argwhere(mask & (w <= 0))[0]
            raise ValueError(f"boundary node ({i}, {j}) is isolated and has no arc length")
        mask = mask.copy()
        mask.flags.writeable = False
        w.flags.writeable = False
        return cls(grid, mask, w)

    @classmethod
    def full(cls, grid: Grid2D) -> "BoundarySet":
        return cls.from_mask(grid, grid.boundary_mask())

    @classmethod
    def from_sides(cls, grid: Grid2D, sides: Iterable[str]) -> "BoundarySet":
        mask = np.zeros(grid.shape, dtype=bool)
        for side in sides:
            if side not in SIDES:
                raise ValueError(f"unknown side {side!r}; expected one of {SIDES}")
            mask[_side_index(side)] = True
        return cls.from_mask(grid, mask)

    @property
    def n_nodes(self) -> int:
        return int(self.mask.sum())

    @property
    def node_indices(self) -> np.ndarray:
        """(n_nodes, 2) array of (i, j), row-major order."""
        return np.argwhere(self.mask)

    @property
    def node_weights(self) -> np.ndarray:
        return self.weights[self.mask]

    @property
    def length(self) -> float:
        return float(self.weights.sum())

    def take(self, f: np.ndarray) -> np.ndarray:
        return f[self.mask]

    def extend(self, values: np.ndarray) -> np.ndarray:
        """Scatter per-node values onto the grid, zero elsewhere."""
        out = np.zeros(self.grid.shape)
        out[self.mask] = values
        return out


def _side_index(side):
    return {
        "left": (0, slice(None)),
        "right": (-1, slice(None)),
        "bottom": (slice(None), 0),
        "top": (slice(None), -1),
    }[side]


def _boundary_lines(grid):
    return [_side_index(s) for s in SIDES]


def boundary_inner(tr1: np.ndarray, tr2: np.ndarray, bset: BoundarySet) -> float:
    tr1 = np.asarray(tr1)
    tr2 = np.asarray(tr2)
    n = bset.n_nodes
    if tr1.shape[-1] != n or tr2.shape[-1] != n:
        raise GridMismatchError(f"trace lengths {tr1.shape[-1]}, {tr2.shape[-1]} do not match {n} boundary nodes")
    return float(np.sum(bset.node_weights * tr1 * tr2))


# --------------------------------------------------------------------------
# two-grid transfer


def _prolong_1d(c: np.ndarray, axis: int) -> np.ndarray:
    c = np.moveaxis(c, axis, 0)
    n = c.shape[0]
    f = np.empty((2 * n - 1,) + c.shape[1:])
    f[0::2] = c
    f[1::2] = 0.5 * (c[:-1] + c[1:])
    return np.moveaxis(f, 0, axis)


def _prolong_1d_transpose(f: np.ndarray, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    c = f[0::2].copy()
    c[:-1] += 0.5 * f[1::2]
    c[1:] += 0.5 * f[1::2]
    return np.moveaxis(c, 0, axis)


def prolong(fc: np.ndarray, coarse: Grid2D) -> np.ndarray:
    """Bilinear interpolation from ``coarse`` onto the factor-2 refined grid."""
    if fc.shape != coarse.shape:
        raise GridMismatchError(f"coarse field shape {fc.shape} does not match {coarse.shape}")
    return _prolong_1d(_prolong_1d(fc, 0), 1)


def restrict(f: np.ndarray, fine: Grid2D) -> np.ndarray:
    """Full weighting onto the factor-2 coarsened grid.

    Defined as the trapezoid-weighted transpose of :func:`prolong`, so
    ``inner_h0(restrict(f), g) == inner_h0(f, prolong(g))``.  Inside it is the
    usual 9-point stencil; at the boundary it is the adapted stencil that
    still preserves constants.
    """
    coarse = fine.coarsen()
    if f.shape != fine.shape:
        raise GridMismatchError(f"field shape {f.shape} does not match {fine.shape}")
    wf = trapezoid_weights(fine)
    wc = trapezoid_weights(coarse)
    return _prolong_1d_transpose(_prolong_1d_transpose(wf * f, 0), 1) / wc


# --------------------------------------------------------------------------
# elliptic solves


@cache
def _dirichlet_symbol(nx: int, ny: int, h: float) -> np.ndarray:
    kx = np.arange(1, nx - 1)
    ky = np.arange(1, ny - 1)
    lx = (4.0 / h**2) * np.sin(np.pi * kx / (2 * (nx - 1))) ** 2
    ly = (4.0 / h**2) * np.sin(np.pi * ky / (2 * (ny - 1))) ** 2
    return lx[:, None] + ly[None, :]


def poisson_dirichlet(rhs: np.ndarray, grid: Grid2D, tol: float = 1e-10) -> np.ndarray:
    """Solve the five-point ``-Δu = rhs`` with ``u = 0`` on the boundary.

    Uses the sine transform that diagonalises the discrete operator; boundary
    entries of ``rhs`` are ignored.  Raises :class:`ConvergenceError` if the
    relative residual exceeds ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = check_field(rhs, grid, "rhs")
    u = np.zeros(grid.shape)
    b = rhs[1:-1, 1:-1]
    if not np.any(b):
        return u
    # solve for a unit-size right-hand side: tiny data would underflow in the
    # residual norm and lose digits as subnormals
    scale = np.abs(b).max()
    b = b / scale
    u[1:-1, 1:-1] = fft.idstn(fft.dstn(b, type=1) / _dirichlet_symbol(grid.nx, grid.ny, grid.h), type=1)
    res = b + laplacian(u, grid.h)[1:-1, 1:-1]
    rel = float(np.linalg.norm(res) / np.linalg.norm(b))
    if not rel <= tol:
        raise ConvergenceError(f"Poisson solve residual {rel:.3e} exceeds tol {tol:.1e}", residual=rel)
    return u * scale


@cache
def _neumann_symbol(nx: int, ny: int, h: float) -> np.ndarray:
    kx = np.arange(nx)
    ky = np.arange(ny)
    lx = -(4.0 / h**2) * np.sin(np.pi * kx / (2 * (nx - 1))) ** 2
    ly = -(4.0 / h**2) * np.sin(np.pi * ky / (2 * (ny - 1))) ** 2
    return lx[:, None] + ly[None, :]


def neumann_symbol(grid: Grid2D) -> np.ndarray:
    """Eigenvalues of :func:`laplacian` in the type-I cosine basis."""
    return _neumann_symbol(grid.nx, grid.ny, grid.h)
