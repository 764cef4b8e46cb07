import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermopat.adjoint import (
    BoundaryControl,
    adjoint_of_measurement,
    adjoint_solve,
    duality_gap,
)
from thermopat.exceptions import GridMismatchError
from thermopat.forward import MeasurementTrace, SolverConfig, measure, trace_inner
from thermopat.grid import (
    BoundarySet,
    Grid2D,
    dirichlet_form,
    inner_h0,
    norm_h0,
    trapezoid_weights,
)
from thermopat.medium import layered_speed, make_medium
from thermopat.probes import random_bandlimited_field, random_boundary_control

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def setup(n=17, tau=1.0, **kw):
    g = Grid2D.unit_square(n)
    m = make_medium(g, **kw)
    return g, m, SolverConfig.for_medium(m, tau=tau)


def test_zero_control_gives_zero():
    g, m, cfg = setup()
    eta = BoundaryControl(np.zeros((cfg.n_steps + 1, m.obs.n_nodes)), cfg.dt, m.obs)
    assert not adjoint_solve(eta, m, cfg).any()


def test_time_grid_must_match():
    g, m, cfg = setup()
    eta = BoundaryControl(np.zeros((cfg.n_steps, m.obs.n_nodes)), cfg.dt, m.obs)
    with pytest.raises(GridMismatchError):
        adjoint_solve(eta, m, cfg)


def test_observed_set_must_match():
    g, m, cfg = setup()
    other = BoundarySet.from_sides(g, ["left"])
    eta = BoundaryControl(np.zeros((cfg.n_steps + 1, other.n_nodes)), cfg.dt, other)
    with pytest.raises(GridMismatchError):
        adjoint_solve(eta, m, cfg)


@settings(max_examples=10, deadline=None)
@given(seed=seeds, a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_observability_map_linear(seed, a, b):
    g, m, cfg = setup(c=1.2)
    rng = np.random.default_rng(seed)
    e1 = random_boundary_control(m.obs, cfg, rng)
    e2 = random_boundary_control(m.obs, cfg, rng)
    lhs = adjoint_solve(e1.scaled(a) + e2.scaled(b), m, cfg)
    s1, s2 = adjoint_solve(e1, m, cfg), adjoint_solve(e2, m, cfg)
    scale = (abs(a) + abs(b)) * max(np.abs(s1).max(), np.abs(s2).max())
    assert np.abs(lhs - (a * s1 + b * s2)).max() <= 1e-12 * scale


def test_lossless_limit_skips_heat_equation_exactly():
    g, m, cfg = setup(epsilon=0.0)
    eta = random_boundary_control(m.obs, cfg, np.random.default_rng(5))
    states = []
    plain = adjoint_solve(eta, m, cfg, coupled=False)
    full = adjoint_solve(eta, m, cfg, coupled=True, callback=states.append)
    np.testing.assert_array_equal(plain, full)
    # with zero coupling the dual temperature stays zero
    assert all(not s.xi.any() for s in states)


def test_callback_walks_backward_to_time_zero():
    g, m, cfg = setup()
    eta = random_boundary_control(m.obs, cfg, np.random.default_rng(6))
    states = []
    adjoint_solve(eta, m, cfg, callback=states.append)
    # level n_steps - 1 comes from the Taylor start; the callback fires from the next one down
    assert [s.step_index for s in states] == list(range(cfg.n_steps - 2, -2, -1))
    assert states[-2].t == 0.0


def test_backward_energy_constant_after_forcing_stops():
    # rigid walls and no coupling: once the control is switched off the dual
    # system is the lossless wave equation, whose leapfrog energy is invariant
    g, m, cfg = setup(n=33, epsilon=0.0, gamma=0.0)
    eta = random_boundary_control(m.obs, cfg, np.random.default_rng(8))
    late = cfg.times > 0.5 * cfg.tau
    eta = BoundaryControl(eta.values * late[:, None], eta.dt, eta.bset)
    w = trapezoid_weights(g)
    energies = []

    def record(s):
        q = (s.psi_next - s.psi_curr) / s.dt
        energies.append((s.t, 0.5 * (np.sum(w * q * q / m.c**2) + dirichlet_form(s.psi_curr, s.psi_next))))

    adjoint_solve(eta, m, cfg, callback=record)
    free = np.array([e for t, e in energies if t < 0.5 * cfg.tau - 2 * cfg.dt])
    assert free[0] > 0
    assert np.all(free[1:] <= free[:-1] * (1 + 1e-10))
    assert np.abs(free - free[0]).max() <= 1e-10 * free[0]


def test_duality_gap_zero_inputs():
    g, m, cfg = setup()
    rng = np.random.default_rng(0)
    eta = random_boundary_control(m.obs, cfg, rng)
    zero = BoundaryControl(np.zeros_like(eta.values), cfg.dt, m.obs)
    assert duality_gap(g.zeros(), eta, m, cfg) == 0.0
    assert duality_gap(random_bandlimited_field(g, rng), zero, m, cfg) == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_duality_gap_at_h64(seed):
    g, m, cfg = setup(n=65, tau=2.0)
    rng = np.random.default_rng(seed)
    p0 = random_bandlimited_field(g, rng)
    eta = random_boundary_control(m.obs, cfg, rng)
    assert duality_gap(p0, eta, m, cfg) <= 0.02


def test_duality_for_nearly_orthogonal_inputs():
    # for this seed both pairings are about 0.2% of |p0| |S eta|, so the
    # relative gap magnifies the O(dt^2) mismatch; measure it against the
    # Cauchy-Schwarz bound instead and check that it converges
    scaled = []
    for n in (65, 129):
        g, m, cfg = setup(n=n, tau=2.0)
        rng = np.random.default_rng(11)
        p0 = random_bandlimited_field(g, rng)
        eta = random_boundary_control(m.obs, cfg, rng)
        s_eta = adjoint_of_measurement(eta, m, cfg)
        lhs = inner_h0(p0, s_eta, g)
        rhs = trace_inner(measure(p0, m, cfg), eta)
        assert abs(lhs) < 0.01 * norm_h0(p0, g) * norm_h0(s_eta, g)
        scaled.append(abs(lhs - rhs) / (norm_h0(p0, g) * norm_h0(s_eta, g)))
    assert scaled[0] <= 1e-4
    assert scaled[1] <= scaled[0] / 3


def test_duality_on_partial_boundary_and_variable_speed():
    # the control lives on two sides only and is zero on the rest
    g = Grid2D.unit_square(65)
    obs = BoundarySet.from_sides(g, ["left", "top"])
    c = layered_speed(g)
    gamma = np.zeros(g.shape)
    gamma[obs.mask] = 1.0 / c[obs.mask]
    m = make_medium(g, c=c, gamma=gamma, obs=obs)
    cfg = SolverConfig.for_medium(m)
    rng = np.random.default_rng(12)
    p0 = random_bandlimited_field(g, rng)
    eta = random_boundary_control(m.obs, cfg, rng)
    assert duality_gap(p0, eta, m, cfg) <= 0.02


def test_gap_uses_both_pairings():
    g, m, cfg = setup(n=33)
    rng = np.random.default_rng(13)
    p0 = random_bandlimited_field(g, rng)
    eta = random_boundary_control(m.obs, cfg, rng)
    lhs = inner_h0(p0, adjoint_of_measurement(eta, m, cfg), g)
    rhs = trace_inner(measure(p0, m, cfg), eta)
    assert duality_gap(p0, eta, m, cfg) == pytest.approx(abs(lhs - rhs) / max(abs(lhs), abs(rhs)), rel=1e-12)


def test_return_psi0_and_control_type():
    g, m, cfg = setup()
    eta = random_boundary_control(m.obs, cfg, np.random.default_rng(3))
    assert isinstance(eta, MeasurementTrace)
    s_eta, psi0 = adjoint_solve(eta, m, cfg, return_psi0=True)
    assert s_eta.shape == psi0.shape == g.shape
    np.testing.assert_array_equal(s_eta, adjoint_solve(eta, m, cfg))
