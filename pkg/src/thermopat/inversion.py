"""Normal-operator inversion by conjugate gradients, and the time-reversal baseline."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adjoint import adjoint_solve
from .exceptions import CGBreakdown
from .forward import MeasurementTrace, SolverConfig, check_trace, measure
from .grid import (
    Grid2D,
    check_field,
    check_finite,
    inner_h0,
    laplacian,
    norm_h0,
    norm_h1,
    poisson_dirichlet,
    prolong,
    restrict,
)
from .medium import MediumFields

log = logging.getLogger(__name__)

MODES = ("h0", "h1")


@dataclass(frozen=True)
class CgOptions:
    mode: str = "h0"
    tol: float = 1e-6
    k_max: int = 50
    coarse_factor: int = 2
    record_history: bool = False
    recompute_residual: bool = True
    # abort when the residual norm exceeds this multiple of the initial one
    blowup_factor: float = 10.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be at least 1, got {self.k_max}")
        if self.coarse_factor != 2:
            raise ValueError("only a single factor-2 coarsening is supported")


@dataclass
class ReconReport:
    estimate: np.ndarray
    residual_norms: list[float] = field(default_factory=list)
    errors_h0: list[float] = field(default_factory=list)
    errors_h1: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    converged: bool = False
    residual_increases: list[int] = field(default_factory=list)
    history: list[np.ndarray] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residual_norms) - 1

    def error_table(self) -> list[tuple[int, float, float]]:
        """Rows ``(iteration, H1 error %, H0 error %)``."""
        return [(k, e1, e0) for k, (e1, e0) in enumerate(zip(self.errors_h1, self.errors_h0))]


def relative_error(est: np.ndarray, truth: np.ndarray, grid: Grid2D, mode: str = "h0") -> float:
    """Percentage error ``100 |est - truth| / |truth|`` in the H0 or H1 norm."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    norm = norm_h0 if mode == "h0" else norm_h1
    est = check_field(est, grid, "estimate")
    truth = check_field(truth, grid, "truth")
    ref = norm(truth, grid)
    if not ref > 0:
        raise ValueError("relative error is undefined for a zero reference field")
    return 100.0 * norm(est - truth, grid) / ref


# --------------------------------------------------------------------------
# operators


def apply_M(p0: np.ndarray, m: MediumFields, cfg: SolverConfig) -> MeasurementTrace:
    return measure(p0, m, cfg)


def riesz_lift_h1(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """H1_0 representative of the functional ``v -> <f, v>``, computed on the coarse grid.

    Restriction, Dirichlet Poisson solve, bilinear prolongation.  The coarse
    solve cannot represent the upper half of the fine spectrum, which is what
    filters grid-scale oscillations out of CG residuals.
    """
    f = check_field(f, grid, "residual")
    coarse = grid.coarsen()
    return prolong(poisson_dirichlet(restrict(f, grid), coarse), coarse)


def apply_M_star(tr: MeasurementTrace, m: MediumFields, cfg: SolverConfig, mode: str = "h0") -> np.ndarray:
    """Adjoint of the measurement map on fields that vanish on the boundary.

    For such fields the boundary term of the full L2 adjoint drops out and
    what remains is ``c^-2 S tr``.  Keeping the boundary term instead makes
    CG spend its first iterations on an O(1/h) boundary layer.  In ``h1``
    mode the result is passed through the Riesz lift.
    """
    out = adjoint_solve(tr, m, cfg) / m.c**2
    out[m.grid.boundary_mask()] = 0.0
    return riesz_lift_h1(out, m.grid) if mode == "h1" else out


def normal_operator(m: MediumFields, cfg: SolverConfig) -> Callable[[np.ndarray], np.ndarray]:
    """``phi -> M* M phi``, symmetric under ``inner_h0`` up to the continuous-adjoint mismatch."""

    def apply(phi):
        return apply_M_star(measure(phi, m, cfg), m, cfg)

    return apply


def time_reversal(tr: MeasurementTrace, m: MediumFields, cfg: SolverConfig) -> np.ndarray:
    """Back-propagate the trace through the lossless acoustic medium.

    Observed nodes take the measured pressure as Dirichlet data; the rest of
    the boundary is reflecting.  Starts from zero interior data at ``tau``
    and returns the field at ``t = 0``.
    """
    check_trace(tr, m, cfg)
    g = m.grid
    h, dt2 = g.h, cfg.dt**2
    c2 = m.c**2
    obs = m.obs.mask
    N = cfg.n_steps

    p_next = np.zeros(g.shape)
    p_next[obs] = tr.values[N]
    # zero velocity at tau: symmetric Taylor step
    p = p_next + 0.5 * dt2 * c2 * laplacian(p_next, h)
    p[obs] = tr.values[N - 1]
    for n in range(N - 1, 0, -1):
        p_prev = 2.0 * p - p_next + dt2 * c2 * laplacian(p, h)
        p_prev[obs] = tr.values[n - 1]
        check_finite(p_prev, "time-reversed pressure", step=n - 1)
        p_next, p = p, p_prev
    return p


def add_noise(tr: MeasurementTrace, rms_fraction: float, rng: np.random.Generator) -> MeasurementTrace:
    """Gaussian noise with RMS ``rms_fraction`` times the RMS of the trace."""
    if rms_fraction < 0:
        raise ValueError("noise level must be nonnegative")
    rms = math.sqrt(float(np.mean(tr.values**2)))
    noise = rng.normal(scale=rms_fraction * rms, size=tr.values.shape)
    return MeasurementTrace(tr.values + noise, tr.dt, tr.bset)


# --------------------------------------------------------------------------
# conjugate gradients


def cg_solve(
    apply_N: Callable[[np.ndarray], np.ndarray],
    zeta: np.ndarray,
    phi0: np.ndarray,
    opt: CgOptions,
    grid: Grid2D,
    truth: np.ndarray | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> ReconReport:
    """Conjugate gradients for ``N phi = zeta``.

    ``apply_N`` must be symmetric with respect to ``inner_h0``.  In ``h1``
    mode every residual is replaced by its Riesz lift, so the iteration runs in
    the H1_0 inner product realised on the coarse grid: squared residual norms
    are ``<lift(g), g>`` and curvatures ``<s, N s>`` with ``g`` the unlifted
    residual.  Stops once the residual norm drops below ``tol`` times the norm
    of ``zeta`` (lifted in ``h1`` mode).
    """
    zeta = check_field(zeta, grid, "zeta")
    phi = check_field(phi0, grid, "phi0").copy()
    lift = (lambda f: riesz_lift_h1(f, grid)) if opt.mode == "h1" else (lambda f: f)

    def sq_norm(g, z):
        return inner_h0(z, g, grid)

    rep = ReconReport(estimate=phi)
    t0 = time.perf_counter()

    def record(phi_k):
        if truth is not None:
            rep.errors_h0.append(relative_error(phi_k, truth, grid, "h0"))
            rep.errors_h1.append(relative_error(phi_k, truth, grid, "h1"))
        if opt.record_history:
            rep.history.append(phi_k.copy())

    zeta_norm = math.sqrt(max(sq_norm(zeta, lift(zeta)), 0.0))
    n_phi = apply_N(phi)
    g = zeta - n_phi
    z = lift(g)
    rr = sq_norm(g, z)
    r_norm = math.sqrt(max(rr, 0.0))
    r0_norm = r_norm
    rep.residual_norms.append(r_norm)
    record(phi)
    s = z.copy()
    if zeta_norm == 0.0 or r_norm <= opt.tol * zeta_norm:
        rep.converged = True
    k = 0
    while not rep.converged and k < opt.k_max:
        n_s = apply_N(s)
        curv = inner_h0(s, n_s, grid)
        if not curv > 0:
            raise CGBreakdown(
                f"iteration {k}: <s, N s> = {curv:.3e} is not positive; the discrete normal operator is not definite"
            )
        step = rr / curv
        phi = phi + step * s
        if opt.recompute_residual:
            n_phi = apply_N(phi)
        else:
            n_phi = n_phi + step * n_s
        g = zeta - n_phi
        z = lift(g)
        rr_new = sq_norm(g, z)
        r_norm = math.sqrt(max(rr_new, 0.0))
        k += 1
        rep.residual_norms.append(r_norm)
        record(phi)
        if callback is not None:
            callback(k, phi)
        if r_norm > rep.residual_norms[-2]:
            rep.residual_increases.append(k)
            log.warning("CG residual increased at iteration %d: %.3e -> %.3e", k, rep.residual_norms[-2], r_norm)
        if r_norm > opt.blowup_factor * r0_norm:
            raise CGBreakdown(
                f"iteration {k}: residual {r_norm:.3e} exceeds {opt.blowup_factor:g} times the initial {r0_norm:.3e}"
            )
        log.info("cg %s iter %d residual %.3e", opt.mode, k, r_norm)
        if r_norm <= opt.tol * zeta_norm:
            rep.converged = True
            break
        s = z + (rr_new / rr) * s
        rr = rr_new
    rep.estimate = phi
    rep.timings["cg"] = time.perf_counter() - t0
    return rep


def reconstruct(
    tr: MeasurementTrace,
    m: MediumFields,
    cfg: SolverConfig,
    opt: CgOptions,
    truth: np.ndarray | None = None,
) -> ReconReport:
    """Invert the normal equations starting from the time-reversal image."""
    check_trace(tr, m, cfg)
    t0 = time.perf_counter()
    zeta = apply_M_star(tr, m, cfg)
    t1 = time.perf_counter()
    phi0 = time_reversal(tr, m, cfg)
    t2 = time.perf_counter()
    rep = cg_solve(normal_operator(m, cfg), zeta, phi0, opt, m.grid, truth=truth)
    rep.timings.update({"adjoint_rhs": t1 - t0, "time_reversal": t2 - t1})
    rep.timings["total"] = time.perf_counter() - t0
    return rep
