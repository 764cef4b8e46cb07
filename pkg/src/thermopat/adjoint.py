"""Backward solver for the dual system and the observability map.

The dual pressure ``psi`` satisfies a wave equation with the impedance sign
reversed and forcing ``eta`` on the observed boundary, coupled to a backward
heat equation.  Internally the heat unknown is ``u = eps*psi - xi``, which
carries a homogeneous Neumann condition; in this variable the system reads

    psi_tt = c^2 (Lap psi + eps Lap u)
    (u - eps psi)_t = -alpha Lap u
    d_n psi - gamma psi_t = eta,   d_n u = 0

and is marched from ``t = tau`` down to ``t = 0`` with the same leapfrog and
Crank-Nicolson pair as the forward solver.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .forward import (
    MeasurementTrace,
    SolverConfig,
    check_trace,
    discretize,
    measure,
    trace_inner,
)
from .grid import boundary_lift, check_field, check_finite, inner_h0, laplacian
from .medium import MediumFields

log = logging.getLogger(__name__)


class BoundaryControl(MeasurementTrace):
    """Boundary data ``eta`` on the observed portion, zero elsewhere.

    Same layout as a measurement trace; the measurement-space pairing is the
    plain L2 one, so traces can be passed wherever a control is expected.
    """


@dataclass
class AdjointState:
    psi_curr: np.ndarray
    psi_next: np.ndarray  # psi one step later in time
    u: np.ndarray
    step_index: int
    dt: float
    epsilon: float

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    @property
    def xi(self) -> np.ndarray:
        """The dual temperature, whose normal derivative matches eps times that of psi."""
        return self.epsilon * self.psi_curr - self.u


def adjoint_solve(
    eta: MeasurementTrace,
    m: MediumFields,
    cfg: SolverConfig,
    coupled: bool | None = None,
    return_psi0: bool = False,
    callback=None,
):
    """The observability map: ``eta -> -psi_t(0)``.

    ``coupled`` forces (True) or skips (False) the heat equation; by default
    it is skipped only when ``eps == 0``, where it decouples exactly.
    ``callback`` receives an :class:`AdjointState` after every backward step.
    """
    sol = _solve(eta, m, cfg, coupled, callback=callback)
    if return_psi0:
        return sol.s_eta, sol.psi0
    return sol.s_eta


@dataclass
class _AdjointSolution:
    s_eta: np.ndarray
    psi0: np.ndarray


# central difference over levels -dt and dt; one-sided uses levels 0 and dt
TIME_DERIVATIVE = "central"


def _solve(eta, m, cfg, coupled, derivative: str | None = None, callback=None) -> _AdjointSolution:
    derivative = derivative or TIME_DERIVATIVE
    check_trace(eta, m, cfg)
    d = discretize(m, cfg)
    g = m.grid
    h = g.h
    eps = d.eps
    coupled = eps != 0 if coupled is None else coupled
    N = cfg.n_steps
    obs = m.obs.mask
    buf = np.zeros(g.shape)

    def forcing(n):
        buf[obs] = eta.values[n]
        return d.obs_lift * buf

    psi_next = np.zeros(g.shape)
    psi = 0.5 * d.dt2 * d.c2 * forcing(N)
    u = d.heat.solve(eps * psi) if coupled else None
    psi_one = psi if N == 2 else np.zeros(g.shape)
    for n in range(N - 1, -1, -1):
        force = laplacian(psi, h) + forcing(n)
        if coupled:
            lap_u = laplacian(u, h)
            force += eps * lap_u
        psi_prev = (2.0 * psi - (1.0 - d.beta) * psi_next + d.dt2 * d.c2 * force) / (1.0 + d.beta)
        check_finite(psi_prev, "dual pressure", step=n - 1)
        if coupled:
            u = d.heat.solve(u + (0.5 * d.dt) * d.alpha * lap_u - eps * (psi - psi_prev))
            check_finite(u, "dual temperature", step=n - 1)
        psi_next, psi = psi, psi_prev
        if callback is not None:
            callback(AdjointState(psi, psi_next, u if coupled else np.zeros(g.shape), n - 1, cfg.dt, eps))
        if n == 2:
            psi_one = psi
    # loop exit: psi_next is level 0, psi is level -1
    psi0 = psi_next
    if derivative == "central":
        s_eta = -(psi_one - psi) / (2.0 * cfg.dt)
    elif derivative == "one_sided":
        s_eta = (psi0 - psi_one) / cfg.dt
    else:
        raise ValueError(f"unknown derivative rule {derivative!r}")
    return _AdjointSolution(s_eta, psi0)


def adjoint_of_measurement(eta: MeasurementTrace, m: MediumFields, cfg: SolverConfig, coupled: bool | None = None):
    """Adjoint of the measurement map with respect to ``inner_h0``.

    Integrating by parts against the forward system gives
    ``M* eta = c^-2 S eta + gamma psi(0)`` on the boundary; the boundary part
    enters through the same lift as the impedance term of the forward step.
    """
    sol = _solve(eta, m, cfg, coupled)
    return sol.s_eta / m.c**2 + boundary_lift(m.grid) * m.gamma * sol.psi0


def duality_gap(p0: np.ndarray, eta: MeasurementTrace, m: MediumFields, cfg: SolverConfig) -> float:
    """Relative mismatch between ``<p0, M* eta>`` and ``<M p0, eta>``."""
    p0 = check_field(p0, m.grid, "p0")
    lhs = inner_h0(p0, adjoint_of_measurement(eta, m, cfg), m.grid)
    rhs = trace_inner(measure(p0, m, cfg), eta)
    scale = max(abs(lhs), abs(rhs))
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs) / scale
