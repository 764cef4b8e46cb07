"""Physical parameters, unitless conversion, phantoms, and media on a grid."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import GridMismatchError
from .grid import BoundarySet, Grid2D, check_field, trapezoid_weights

# Typical soft-tissue ranges; values outside only trigger a warning.
TISSUE_RANGES = {
    "K": (2.0e9, 2.5e9),
    "rho": (900.0, 1100.0),
    "theta_ref": (290.0, 310.0),
    "beta": (200e-6, 300e-6),
    "c_p": (500.0, 5000.0),
}
THETA_REF_WINDOW = (100.0, 500.0)


@dataclass(frozen=True)
class PhysicalParams:
    K: float  # bulk modulus, Pa
    rho: float  # density, kg/m^3
    theta_ref: float  # K
    beta: float  # volumetric thermal expansion, 1/K
    c_p: float  # specific heat, J/(kg K)
    alpha_phys: float  # thermal diffusivity, m^2/s
    L: float  # length scale, m
    c_phys: float | np.ndarray | None = None  # compressional speed, m/s; defaults to c_ref

    def __post_init__(self):
        for name in ("K", "rho", "theta_ref", "c_p", "alpha_phys", "L"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.c_phys is not None and not np.all(np.asarray(self.c_phys) > 0):
            raise ValueError("c_phys must be positive everywhere")
        lo, hi = THETA_REF_WINDOW
        if not lo <= self.theta_ref <= hi:
            raise ValueError(f"theta_ref={self.theta_ref} K is outside the sanity window {THETA_REF_WINDOW}")
        for name, (lo, hi) in TISSUE_RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                warnings.warn(f"{name}={v:g} is outside the typical soft-tissue range [{lo:g}, {hi:g}]", stacklevel=3)


@dataclass(frozen=True)
class UnitlessParams:
    c_hat: float | np.ndarray
    alpha_hat: float
    sigma: float
    epsilon: float
    gruneisen: float
    T: float  # time scale, s


def nondimensionalize(p: PhysicalParams) -> UnitlessParams:
    c_ref = math.sqrt(p.K / p.rho)
    T = p.L / c_ref
    c_phys = c_ref if p.c_phys is None else p.c_phys
    c_hat = np.sqrt(np.asarray(c_phys, dtype=float) ** 2 * T**2 / p.L**2)
    if c_hat.ndim == 0:
        c_hat = float(c_hat)
    sigma = p.K / (p.theta_ref * p.rho * p.c_p)
    epsilon = p.beta * p.theta_ref
    if not math.isclose(sigma, 1.0):
        warnings.warn(
            f"sigma = {sigma:.3g}; the solver implements the sigma = 1 equations, "
            "this value is reported only",
            stacklevel=2,
        )
    return UnitlessParams(
        c_hat=c_hat,
        alpha_hat=p.alpha_phys * T / p.L**2,
        sigma=sigma,
        epsilon=epsilon,
        gruneisen=epsilon * sigma,
        T=T,
    )


# --------------------------------------------------------------------------
# phantoms

# Modified Shepp-Logan table on [-1, 1]^2:
# (intensity, semi-axis x, semi-axis y, centre x, centre y, rotation in degrees)
SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def _phantom_coords(grid):
    x, y = grid.coords()
    x0, x1, y0, y1 = grid.extent
    # map the grid's extent onto [-1, 1]^2
    return 2 * (x - x0) / (x1 - x0) - 1, 2 * (y - y0) / (y1 - y0) - 1


def ellipse_mask(X, Y, a, b, x0, y0, phi_deg):
    phi = math.radians(phi_deg)
    cos, sin = math.cos(phi), math.sin(phi)
    u = (X - x0) * cos + (Y - y0) * sin
    v = -(X - x0) * sin + (Y - y0) * cos
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def shepp_logan(grid: Grid2D, scale: float = 1.0) -> np.ndarray:
    X, Y = _phantom_coords(grid)
    out = np.zeros(grid.shape)
    for A, a, b, x0, y0, phi in SHEPP_LOGAN:
        out[ellipse_mask(X, Y, a, b, x0, y0, phi)] += A
    # 1 - 0.8 - 0.2 rounds to -5e-17 inside the dark ellipses
    np.clip(out, 0.0, None, out=out)
    out[np.abs(out) < 1e-12] = 0.0
    return out * (scale / out.max())


def gaussian_blob(grid: Grid2D, center=(0.5, 0.5), width=0.1, amplitude=1.0) -> np.ndarray:
    X, Y = grid.coords()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return amplitude * np.exp(-r2 / (2 * width**2))


@dataclass(frozen=True)
class EllipticAnnulus:
    """Region between two concentric axis-aligned ellipses (unit-square coordinates)."""

    center: tuple[float, float] = (0.5, 0.5)
    inner: tuple[float, float] = (0.225, 0.35)
    outer: tuple[float, float] = (0.275, 0.40)

    def mask(self, grid: Grid2D) -> np.ndarray:
        X, Y = grid.coords()
        cx, cy = self.center
        r_in = ((X - cx) / self.inner[0]) ** 2 + ((Y - cy) / self.inner[1]) ** 2
        r_out = ((X - cx) / self.outer[0]) ** 2 + ((Y - cy) / self.outer[1]) ** 2
        return (r_in > 1.0) & (r_out <= 1.0)


def box_smooth(f: np.ndarray) -> np.ndarray:
    """One pass of 3x3 averaging with mirrored edges."""
    g = np.pad(f, 1, mode="reflect")
    out = np.zeros_like(f)
    for di in range(3):
        for dj in range(3):
            out += g[di : di + f.shape[0], dj : dj + f.shape[1]]
    return out / 9.0


def layered_speed(
    grid: Grid2D,
    base: float = 1.0,
    layer_value: float = 1.5,
    region: EllipticAnnulus | None = None,
) -> np.ndarray:
    """Wave speed equal to ``base`` except inside ``region``, lightly smoothed.

    The default annulus wraps the inner ellipses of :func:`shepp_logan`.
    """
    if not (base > 0 and layer_value > 0):
        raise ValueError(f"speeds must be positive, got base={base}, layer_value={layer_value}")
    region = region or EllipticAnnulus()
    c = np.full(grid.shape, float(base))
    c[region.mask(grid)] = layer_value
    c = box_smooth(c)
    return np.clip(c, min(base, layer_value), max(base, layer_value))


# --------------------------------------------------------------------------
# media


@dataclass(eq=False)
class MediumFields:
    """Coefficients of the unitless thermoacoustic system on a grid.

    ``gamma`` is a full-grid array that must vanish off the boundary; ``obs``
    is the observed boundary portion.  Instances hash by identity so solvers
    can cache their factorizations per medium.
    """

    grid: Grid2D
    c: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    obs: BoundarySet
    epsilon: float

    def __post_init__(self):
        g = self.grid
        self.c = _as_field(self.c, g, "c")
        self.alpha = _as_field(self.alpha, g, "alpha")
        self.gamma = _as_field(self.gamma, g, "gamma")
        if self.obs.grid != g:
            raise GridMismatchError("observation set lives on a different grid")
        if not self.c.min() > 0:
            raise ValueError("wave speed must be positive")
        if not self.alpha.min() > 0:
            raise ValueError("thermal diffusivity must be positive")
        if self.gamma.min() < 0:
            raise ValueError("impedance must be nonnegative")
        if np.any(self.gamma[~g.boundary_mask()] != 0):
            raise ValueError("impedance must vanish away from the boundary")
        if np.any((self.gamma > 0) & ~self.obs.mask):
            i, j = np.argwhere((self.gamma > 0) & ~self.obs.mask)[0]
            raise ValueError(f"absorbing node ({i}, {j}) lies outside the observed boundary")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        self.epsilon = float(self.epsilon)

    @property
    def alpha_is_constant(self) -> bool:
        return bool(np.all(self.alpha == self.alpha.flat[0]))

    def with_epsilon(self, epsilon: float) -> "MediumFields":
        return MediumFields(self.grid, self.c, self.alpha, self.gamma, self.obs, epsilon)


def _as_field(v, grid, name):
    if np.ndim(v) == 0:
        return np.full(grid.shape, float(v))
    return check_field(np.array(v, dtype=float), grid, name)


def impedance_inverse_speed(c: np.ndarray, grid: Grid2D) -> np.ndarray:
    gamma = np.zeros(grid.shape)
    bnd = grid.boundary_mask()
    gamma[bnd] = 1.0 / c[bnd]
    return gamma


def make_medium(
    grid: Grid2D,
    c: float | np.ndarray = 1.0,
    alpha: float | np.ndarray = 0.01,
    epsilon: float = 0.1,
    gamma: str | float | np.ndarray = "inverse_speed",
    obs: BoundarySet | None = None,
) -> MediumFields:
    """Build a medium; by default the experiment setup with gamma = 1/c on the full boundary."""
    c = _as_field(c, grid, "c")
    if not c.min() > 0:
        raise ValueError("wave speed must be positive")
    obs = obs if obs is not None else BoundarySet.full(grid)
    if isinstance(gamma, str):
        if gamma != "inverse_speed":
            raise ValueError(f"unknown impedance rule {gamma!r}")
        gamma = impedance_inverse_speed(c, grid) * obs.mask
    elif np.ndim(gamma) == 0:
        gamma = float(gamma) * obs.mask
    return MediumFields(grid, c, alpha, gamma, obs, epsilon)


@dataclass(frozen=True)
class EnergySpaceSplit:
    p0: np.ndarray
    p1: np.ndarray
    theta0: np.ndarray
    p_const: float
    theta_const: float


def project_energy_space(p0, p1, theta0, m: MediumFields) -> EnergySpaceSplit:
    """Remove the zero-energy constant mode from initial data.

    The discrete conserved functionals (boundary-weighted pressure plus
    c^-2 weighted velocity, and the mean of theta - eps p) vanish on the
    returned fields.
    """
    g = m.grid
    p0 = check_field(p0, g, "p0")
    p1 = check_field(p1, g, "p1")
    theta0 = check_field(theta0, g, "theta0")
    w = trapezoid_weights(g)
    gamma_arc = BoundarySet.full(g).weights * m.gamma
    total = float(gamma_arc.sum())
    if not total > 0:
        raise ValueError(
            "the constant-mode split is undefined for a fully reflective boundary (integral of gamma is 0)"
        )
    p_const = (float(np.sum(w * p1 / m.c**2)) + float(np.sum(gamma_arc * p0))) / total
    area = float(w.sum())
    theta_const = float(np.sum(w * (theta0 - m.epsilon * p0))) / area + m.epsilon * p_const
    return EnergySpaceSplit(p0 - p_const, p1.copy(), theta0 - theta_const, p_const, theta_const)
