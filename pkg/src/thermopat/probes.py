"""Random smooth inputs for duality, linearity and CG checks."""
from __future__ import annotations

import numpy as np

from .forward import MeasurementTrace, SolverConfig
from .grid import BoundarySet, Grid2D


def random_bandlimited_field(grid: Grid2D, rng: np.random.Generator, k_max: int = 4, window: bool = True) -> np.ndarray:
    """Random cosine series with modes ``|k| <= k_max``.

    With ``window`` the field is multiplied by ``sin(pi x)^2 sin(pi y)^2`` so
    it vanishes to second order on the boundary.
    """
    x, y = grid.coords()
    x0, x1, y0, y1 = grid.extent
    xs, ys = (x - x0) / (x1 - x0), (y - y0) / (y1 - y0)
    f = np.zeros(grid.shape)
    for kx in range(k_max + 1):
        for ky in range(k_max + 1):
            a, phase = rng.normal(size=2)
            f += a * np.cos(np.pi * kx * xs + phase) * np.cos(np.pi * ky * ys)
    if window:
        f *= np.sin(np.pi * xs) ** 2 * np.sin(np.pi * ys) ** 2
    return f / np.max(np.abs(f))


def random_boundary_control(
    bset: BoundarySet, cfg: SolverConfig, rng: np.random.Generator, n_modes: int = 3
) -> MeasurementTrace:
    """Smooth random data on ``(0, tau) x bset``: products of low sine/cosine modes.

    The position along the boundary is parameterised by the angle around the
    grid centre, so the data is continuous across corners.
    """
    g = bset.grid
    idx = bset.node_indices
    x0, x1, y0, y1 = g.extent
    xs = x0 + idx[:, 0] * g.h - 0.5 * (x0 + x1)
    ys = y0 + idx[:, 1] * g.h - 0.5 * (y0 + y1)
    angle = np.arctan2(ys, xs)
    t = cfg.times / cfg.tau
    vals = np.zeros((t.size, idx.shape[0]))
    for k in range(n_modes):
        for j in range(n_modes):
            a, b = rng.normal(size=2)
            vals += a * np.outer(np.sin(np.pi * (k + 1) * t), np.cos(j * angle + b))
    return MeasurementTrace(vals / np.max(np.abs(vals)), cfg.dt, bset)
