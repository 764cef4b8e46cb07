"""Time stepping for the coupled pressure-temperature system.

The wave equation is advanced with leapfrog, the heat equation with
Crank-Nicolson, coupled explicitly:

    p^{n+1} = 2p^n - p^{n-1} + dt^2 c^2 (Lap_h p^n + eps Lap theta^n)
    (I - dt/2 alpha Lap) theta^{n+1} = (I + dt/2 alpha Lap) theta^n + eps (p^{n+1} - p^n)

The impedance condition enters through a ghost node with the centred
velocity ``(p^{n+1} - p^{n-1}) / 2dt``, which is diagonal and so stays
explicit.  The velocity that drives the heat equation is centred at the
Crank-Nicolson midpoint.  With these choices the discrete energy returned
by :func:`energy` decreases by exactly ``dt`` times the discrete dissipation
every step, and both conserved functionals are conserved to rounding.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import fft

from .exceptions import GridMismatchError
from .grid import (
    BoundarySet,
    Grid2D,
    boundary_inner,
    boundary_lift,
    check_field,
    check_finite,
    dirichlet_form,
    laplacian,
    neumann_symbol,
    trapezoid_weights,
)
from .medium import MediumFields

# Courant factor used unless configured otherwise.  Lower values leave more
# of a discontinuous initial profile's energy in slow, dispersive grid-scale
# modes at the end of the run.
DEFAULT_CFL = 0.75


@dataclass(frozen=True)
class SolverConfig:
    tau: float
    cfl: float
    dt: float
    n_steps: int
    record_full: bool = False

    @classmethod
    def build(cls, grid: Grid2D, c_max: float, tau: float = 2.0, cfl: float = DEFAULT_CFL, record_full: bool = False):
        """Largest step with ``c_max dt / h <= cfl / sqrt(2)`` that divides ``tau`` evenly."""
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        if not 0 < cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {cfl}")
        if cfl == 1:
            warnings.warn(
                "cfl = 1 sits on the leapfrog stability limit; the discrete energy is only "
                "semidefinite there and grid-scale modes may grow",
                stacklevel=2,
            )
        dt_max = cfl * grid.h / (math.sqrt(2.0) * c_max)
        n_steps = max(1, math.ceil(tau / dt_max - 1e-9))
        return cls(tau=float(tau), cfl=float(cfl), dt=tau / n_steps, n_steps=n_steps, record_full=record_full)

    @classmethod
    def for_medium(cls, m: MediumFields, tau: float = 2.0, cfl: float = DEFAULT_CFL, record_full: bool = False):
        return cls.build(m.grid, float(m.c.max()), tau, cfl, record_full)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass
class ThermoacousticState:
    """Pressure at two time levels and temperature at the current level.

    ``theta_prev`` and ``p_prev2`` are kept only so that diagnostics can use the
    same time differences as the scheme itself.
    """

    p_curr: np.ndarray
    p_prev: np.ndarray
    theta: np.ndarray
    step_index: int
    dt: float
    theta_prev: np.ndarray | None = None
    p_prev2: np.ndarray | None = None

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    @property
    def velocity(self) -> np.ndarray:
        return (self.p_curr - self.p_prev) / self.dt


@dataclass
class MeasurementTrace:
    """Samples on the observed boundary: row ``n`` is time ``n*dt``."""

    values: np.ndarray
    dt: float
    bset: BoundarySet

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.bset.n_nodes:
            raise GridMismatchError(
                f"trace shape {self.values.shape} does not match {self.bset.n_nodes} observed nodes"
            )
        check_finite(self.values, "trace")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def scaled(self, a: float) -> "MeasurementTrace":
        return MeasurementTrace(a * self.values, self.dt, self.bset)

    def __add__(self, other: "MeasurementTrace") -> "MeasurementTrace":
        return MeasurementTrace(self.values + other.values, self.dt, self.bset)

    def __sub__(self, other: "MeasurementTrace") -> "MeasurementTrace":
        return MeasurementTrace(self.values - other.values, self.dt, self.bset)


def trace_inner(tr1: MeasurementTrace, tr2: MeasurementTrace) -> float:
    """L2 pairing on (0, tau) x Gamma: trapezoid in time, arc weights in space."""
    if tr1.values.shape != tr2.values.shape:
        raise GridMismatchError(f"trace shapes differ: {tr1.values.shape} vs {tr2.values.shape}")
    wt = np.full(tr1.n_steps + 1, tr1.dt)
    wt[[0, -1]] *= 0.5
    return float(np.sum(wt[:, None] * tr1.bset.node_weights[None, :] * tr1.values * tr2.values))


def trace_norm(tr: MeasurementTrace) -> float:
    return math.sqrt(max(trace_inner(tr, tr), 0.0))


def check_trace(tr: MeasurementTrace, m: MediumFields, cfg: SolverConfig) -> None:
    if tr.n_steps != cfg.n_steps or not math.isclose(tr.dt, cfg.dt, rel_tol=1e-12):
        raise GridMismatchError(
            f"trace has {tr.n_steps} steps of {tr.dt:g}, solver expects {cfg.n_steps} of {cfg.dt:g}"
        )
    if tr.bset.grid != m.grid or not np.array_equal(tr.bset.mask, m.obs.mask):
        raise GridMismatchError("trace was recorded on a different observed boundary")


# --------------------------------------------------------------------------
# discretisation shared by forward and adjoint solvers


class HeatSolver:
    """Solves ``(I - dt/2 alpha Lap) x = rhs`` with the Neumann Laplacian.

    Constant diffusivity uses the cosine transform; variable diffusivity a
    sparse LU factorisation.
    """

    def __init__(self, grid: Grid2D, alpha: np.ndarray, dt: float):
        self.grid = grid
        self.shape = grid.shape
        if np.all(alpha == alpha.flat[0]):
            self._symbol = 1.0 - 0.5 * dt * float(alpha.flat[0]) * neumann_symbol(grid)
            self._lu = None
        else:
            self._symbol = None
            lap = neumann_laplacian_matrix(grid)
            op = sp.identity(grid.nx * grid.ny, format="csc") - 0.5 * dt * sp.diags(alpha.ravel()) @ lap
            self._lu = spla.splu(op.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return fft.idctn(fft.dctn(rhs, type=1) / self._symbol, type=1)
        return self._lu.solve(rhs.ravel()).reshape(self.shape)


def neumann_laplacian_matrix(grid: Grid2D) -> sp.csr_matrix:
    """Sparse matrix of :func:`laplacian` acting on C-ordered fields."""

    def second_diff(n):
        main = -2.0 * np.ones(n)
        upper = np.ones(n - 1)
        lower = np.ones(n - 1)
        upper[0] = 2.0
        lower[-1] = 2.0
        return sp.diags([lower, main, upper], [-1, 0, 1])

    dx = second_diff(grid.nx)
    dy = second_diff(grid.ny)
    lap = sp.kron(dx, sp.identity(grid.ny)) + sp.kron(sp.identity(grid.nx), dy)
    return (lap / grid.h**2).tocsr()


class Discretization:
    """Coefficient arrays and solvers for one (medium, config) pair."""

    def __init__(self, m: MediumFields, cfg: SolverConfig):
        g = m.grid
        self.grid = g
        self.dt = cfg.dt
        self.dt2 = cfg.dt**2
        self.eps = m.epsilon
        self.c2 = m.c**2
        self.alpha = m.alpha
        self.weights = trapezoid_weights(g)
        # impedance ghost term, and its damping factor in the leapfrog update
        self.gamma_lift = boundary_lift(g) * m.gamma
        self.beta = 0.5 * cfg.dt * self.c2 * self.gamma_lift
        self.gamma_arc = BoundarySet.full(g).weights * m.gamma
        # forcing on the observed portion only
        self.obs_lift = m.obs.weights / self.weights
        self.mass = self.weights / self.c2
        self.heat = HeatSolver(g, m.alpha, cfg.dt)


@lru_cache(maxsize=8)
def discretize(m: MediumFields, cfg: SolverConfig) -> Discretization:
    return Discretization(m, cfg)


# --------------------------------------------------------------------------
# stepping


def init_state(
    p0: np.ndarray,
    m: MediumFields,
    cfg: SolverConfig,
    theta0: np.ndarray | None = None,
    p1: np.ndarray | None = None,
) -> ThermoacousticState:
    """Initial state; by default zero velocity and ``theta0 = eps p0``.

    ``p_prev`` is the Taylor value at ``-dt`` so that the first leapfrog step
    is second-order accurate.
    """
    g = m.grid
    p0 = check_field(p0, g, "p0")
    theta0 = m.epsilon * p0 if theta0 is None else check_field(theta0, g, "theta0")
    p1 = np.zeros(g.shape) if p1 is None else check_field(p1, g, "p1")
    d = discretize(m, cfg)
    acc = d.c2 * (laplacian(p0, g.h) + d.eps * laplacian(theta0, g.h) - d.gamma_lift * p1)
    p_prev = p0 - cfg.dt * p1 + 0.5 * d.dt2 * acc
    return ThermoacousticState(p0.copy(), p_prev, theta0.copy(), 0, cfg.dt, theta_prev=theta0.copy())


def step(s: ThermoacousticState, m: MediumFields, cfg: SolverConfig) -> ThermoacousticState:
    d = discretize(m, cfg)
    h = m.grid.h
    p, p_prev, theta = s.p_curr, s.p_prev, s.theta
    lap_theta = laplacian(theta, h)
    force = laplacian(p, h)
    if d.eps:
        force += d.eps * lap_theta
    p_next = (2.0 * p - (1.0 - d.beta) * p_prev + d.dt2 * d.c2 * force) / (1.0 + d.beta)
    rhs = theta + (0.5 * d.dt) * d.alpha * lap_theta
    if d.eps:
        rhs += d.eps * (p_next - p)
    theta_next = d.heat.solve(rhs)
    n = s.step_index + 1
    check_finite(p_next, "pressure", step=n)
    check_finite(theta_next, "temperature", step=n)
    return ThermoacousticState(p_next, p, theta_next, n, s.dt, theta_prev=theta, p_prev2=p_prev)


# --------------------------------------------------------------------------
# diagnostics


def energy(s: ThermoacousticState, m: MediumFields) -> float:
    """Discrete energy of the scheme at ``s``.

    Approximates 1/2 of the integral of |grad p|^2 + c^-2 |p_t|^2 + |grad theta|^2
    to first order in dt.  Half-step gradient pairing plus a small coupling
    correction make it exactly non-increasing along :func:`step`.
    """
    w = trapezoid_weights(m.grid)
    q = s.velocity
    kinetic = float(np.sum(w * q * q / m.c**2))
    potential = dirichlet_form(s.p_curr, s.p_prev)
    thermal = dirichlet_form(s.theta, s.theta)
    coupling = dirichlet_form(q, s.theta) if m.epsilon else 0.0
    return 0.5 * (kinetic + potential + thermal) - 0.5 * s.dt * m.epsilon * coupling


def dissipation_rate(s: ThermoacousticState, m: MediumFields) -> float:
    """dE/dt = -(integral of alpha |Lap theta|^2) - (boundary integral of gamma |p_t|^2).

    Each term uses the time difference the scheme applies to it over the last
    step: theta is averaged over the step (Crank-Nicolson) and the boundary
    velocity is the centred difference of the impedance term.  With those
    choices the rate equals the energy decrement per step to roundoff.  The
    one-sided velocity ``(p_curr - p_prev)/dt`` is only first-order close and
    picks up the fast grid-scale oscillations, increasingly so at large cfl.
    The first state has no earlier level and falls back to the one-sided velocity.
    """
    g = m.grid
    theta = s.theta if s.theta_prev is None else 0.5 * (s.theta + s.theta_prev)
    lap = laplacian(theta, g.h)
    q = s.velocity if s.p_prev2 is None else (s.p_curr - s.p_prev2) / (2.0 * s.dt)
    vol = float(np.sum(trapezoid_weights(g) * m.alpha * lap * lap))
    surf = float(np.sum(BoundarySet.full(g).weights * m.gamma * q * q))
    return -(vol + surf)


class ConservedQuantities(NamedTuple):
    acoustic: float
    thermal: float
    thermal_weighted: float  # alpha^-1 weighted variant


def conserved_quantities(s: ThermoacousticState, m: MediumFields) -> ConservedQuantities:
    g = m.grid
    w = trapezoid_weights(g)
    q = s.velocity
    p_mid = 0.5 * (s.p_curr + s.p_prev)
    acoustic = float(np.sum(w * q / m.c**2)) + float(np.sum(BoundarySet.full(g).weights * m.gamma * p_mid))
    excess = s.theta - m.epsilon * s.p_curr
    return ConservedQuantities(acoustic, float(np.sum(w * excess)), float(np.sum(w * excess / m.alpha)))


@dataclass
class Diagnostics:
    times: np.ndarray
    energy: np.ndarray
    dissipation_rate: np.ndarray
    q_acoustic: np.ndarray
    q_thermal: np.ndarray
    q_thermal_weighted: np.ndarray
    snapshots: list = field(default_factory=list)

    @property
    def energy_slope(self) -> np.ndarray:
        """Finite-difference dE/dt between consecutive steps."""
        return np.diff(self.energy) / np.diff(self.times)

    def as_columns(self) -> dict[str, np.ndarray]:
        return {
            "t": self.times,
            "energy": self.energy,
            "dissipation_rate": self.dissipation_rate,
            "q_acoustic": self.q_acoustic,
            "q_thermal": self.q_thermal,
            "q_thermal_weighted": self.q_thermal_weighted,
        }


def forward_solve(
    p0: np.ndarray,
    m: MediumFields,
    cfg: SolverConfig,
    theta0: np.ndarray | None = None,
    p1: np.ndarray | None = None,
    diagnostics: bool = True,
):
    """Run the forward problem over ``[0, tau]``.

    Returns ``(trace, final_state, diagnostics)``; ``diagnostics`` is None when
    not requested.
    """
    s = init_state(p0, m, cfg, theta0=theta0, p1=p1)
    obs = m.obs.mask
    values = np.empty((cfg.n_steps + 1, m.obs.n_nodes))
    values[0] = s.p_curr[obs]
    rec = None
    if diagnostics:
        rec = {k: np.empty(cfg.n_steps + 1) for k in ("E", "rate", "qa", "qt", "qw")}
        snaps = []
        _record(rec, 0, s, m)
        if cfg.record_full:
            snaps.append(s.p_curr.copy())
    for n in range(1, cfg.n_steps + 1):
        s = step(s, m, cfg)
        values[n] = s.p_curr[obs]
        if diagnostics:
            _record(rec, n, s, m)
            if cfg.record_full:
                snaps.append(s.p_curr.copy())
    trace = MeasurementTrace(values, cfg.dt, m.obs)
    if not diagnostics:
        return trace, s, None
    diag = Diagnostics(cfg.times, rec["E"], rec["rate"], rec["qa"], rec["qt"], rec["qw"], snaps)
    return trace, s, diag


def _record(rec, n, s, m):
    rec["E"][n] = energy(s, m)
    rec["rate"][n] = dissipation_rate(s, m)
    qa, qt, qw = conserved_quantities(s, m)
    rec["qa"][n] = qa
    rec["qt"][n] = qt
    rec["qw"][n] = qw


def measure(p0: np.ndarray, m: MediumFields, cfg: SolverConfig) -> MeasurementTrace:
    """The measurement map: boundary pressure on the observed portion."""
    trace, _, _ = forward_solve(p0, m, cfg, diagnostics=False)
    return trace


def boundary_pairing(tr: MeasurementTrace, row: int, f: np.ndarray) -> float:
    return boundary_inner(tr.values[row], tr.bset.take(f), tr.bset)
