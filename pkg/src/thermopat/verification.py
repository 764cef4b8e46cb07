"""Numerical checks shared by the ``selftest`` command and the test suite.

Each check returns a plain dict with the measured numbers and a ``passed``
flag, so the CLI can dump it as JSON.
"""
from __future__ import annotations

import math

import numpy as np

from .adjoint import duality_gap
from .forward import DEFAULT_CFL, SolverConfig, forward_solve
from .grid import Grid2D, norm_h0
from .inversion import CgOptions, cg_solve
from .medium import make_medium, shepp_logan
from .probes import random_bandlimited_field, random_boundary_control


def observed_orders(hs, errors) -> list[float]:
    """Pairwise convergence orders ``log(e1/e2) / log(h1/h2)``."""
    return [math.log(errors[i] / errors[i + 1]) / math.log(hs[i] / hs[i + 1]) for i in range(len(hs) - 1)]


def standing_wave_errors(ns=(33, 65, 129), tau: float = 1.0, cfl: float = DEFAULT_CFL) -> dict:
    """L2 error of the lossless rigid-wall solver against ``cos(sqrt2 pi t) cos(pi x) cos(pi y)``."""
    hs, errs = [], []
    for n in ns:
        g = Grid2D.unit_square(n)
        m = make_medium(g, c=1.0, alpha=0.01, epsilon=0.0, gamma=0.0)
        cfg = SolverConfig.for_medium(m, tau=tau, cfl=cfl)
        x, y = g.coords()
        mode = np.cos(np.pi * x) * np.cos(np.pi * y)
        _, final, _ = forward_solve(mode, m, cfg, diagnostics=False)
        exact = math.cos(math.sqrt(2.0) * math.pi * tau) * mode
        hs.append(g.h)
        errs.append(norm_h0(final.p_curr - exact, g))
    return {"h": hs, "error": errs, "order": observed_orders(hs, errs)}


def energy_decay(n: int = 129, cfl: float = DEFAULT_CFL, rel_tol: float = 1e-10) -> dict:
    """Energy history of the constant-speed Shepp-Logan run."""
    g = Grid2D.unit_square(n)
    m = make_medium(g, c=1.0, alpha=0.01, epsilon=0.1)
    cfg = SolverConfig.for_medium(m, cfl=cfl)
    _, _, diag = forward_solve(shepp_logan(g), m, cfg)
    E = diag.energy
    worst = float(np.max((E[1:] - E[:-1]) / np.abs(E[:-1])))
    return {
        "final_ratio": float(E[-1] / E[0]),
        "max_relative_increase": worst,
        "monotone": bool(worst <= rel_tol),
        "diagnostics": diag,
        "config": cfg,
    }


def duality_study(ns=(33, 65), seeds=(0, 1, 2), cfl: float = DEFAULT_CFL) -> dict:
    """Duality gaps for random band-limited data on the constant-speed medium."""
    hs, gaps = [], []
    for n in ns:
        g = Grid2D.unit_square(n)
        m = make_medium(g, c=1.0, alpha=0.01, epsilon=0.1)
        cfg = SolverConfig.for_medium(m, cfl=cfl)
        per_seed = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            p0 = random_bandlimited_field(g, rng)
            eta = random_boundary_control(m.obs, cfg, rng)
            per_seed.append(duality_gap(p0, eta, m, cfg))
        hs.append(g.h)
        gaps.append(per_seed)
    worst = [max(row) for row in gaps]
    return {"h": hs, "gaps": gaps, "worst": worst, "order": observed_orders(hs, worst)}


def cg_envelope(n: int = 33, seed: int = 0, tol: float = 1e-12) -> dict:
    """CG on the diagonal operator ``phi -> (1 + x) phi`` against the geometric envelope.

    The exact solution is a pointwise division, so the error of every iterate
    is known.  ``m`` and ``M`` are the extreme Rayleigh quotients, i.e. the
    extreme diagonal entries.
    """
    g = Grid2D.unit_square(n)
    x, _ = g.coords()
    d = 1.0 + x
    rng = np.random.default_rng(seed)
    zeta = rng.normal(size=g.shape)
    exact = zeta / d
    rep = cg_solve(lambda f: d * f, zeta, np.zeros(g.shape), CgOptions(mode="h0", tol=tol, k_max=200, record_history=True), g)
    lo, hi = float(d.min()), float(d.max())
    sigma = math.log((hi + lo) / (hi - lo))
    e0 = norm_h0(exact, g)
    errs = [norm_h0(exact - phi, g) for phi in rep.history]
    bound = [math.exp(-sigma * k) * e0 for k in range(len(errs))]
    ok = all(e <= b * (1 + 1e-12) + 1e-14 * e0 for e, b in zip(errs, bound))
    return {"m": lo, "M": hi, "sigma": sigma, "errors": errs, "envelope": bound, "iterations": rep.iterations,
            "converged": rep.converged, "passed": ok}
