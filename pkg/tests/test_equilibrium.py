import numpy as np
import pytest

from conftest import Setup
from memsim.energy import operators_for, trapz
from memsim.equilibrium import (MinimizeOptions, default_test_directions,
                                minimize_total_energy, project_admissible,
                                strong_form_residual, total_energy,
                                total_gradient, vi_residual)
from memsim.errors import InadmissibleTestDirection
from memsim.geometry import bump_profile, make_grid, make_profile, zero_profile


def test_gradient_zero_rest_state():
    s = Setup(V=0.0)
    g = total_gradient(zero_profile(s.params, s.nx), s.ctx)
    assert np.abs(g).max() == 0.0


def test_gradient_quartic_fourth_derivative():
    # (1 - x^2)^2 has constant fourth derivative 24; the 5-point stencil
    # reproduces it exactly away from the end closures
    s = Setup(V=0.0)
    x = make_grid(s.params.L, s.nx).nodes
    p = make_profile((1 - x**2) ** 2, s.params, "clamped")
    g = total_gradient(p, s.ctx)
    assert np.abs(g[3:-3] - 24.0).max() < 1e-7
    assert abs(g[1] - 24.0) > 1.0  # ghost closure differs at the wall


def test_gradient_small_voltage_rest_state():
    s = Setup(V=0.05)
    g = total_gradient(zero_profile(s.params, s.nx), s.ctx)
    expect = 2.0 * 0.05**2 / 9.0
    assert np.abs(g[1:-1] - expect).max() <= 1e-6 * expect + 1e-10


def test_gradient_matches_energy_differences():
    s = Setup(V=0.1, beta=1.0, tau=0.5, a=0.2, tol=1e-12)
    u = bump_profile(s.params, s.nx, 0.3)
    grad = total_gradient(u, s.ctx)
    ops = operators_for(u)
    rng = np.random.default_rng(42)
    xi = u.grid.nodes / s.params.L
    env = (1 - xi**2) ** 2
    for _ in range(2):
        c = rng.standard_normal(4)
        theta = env * sum(ci * np.cos((k + 1) * np.pi * xi)
                          for k, ci in enumerate(c))
        t = 1e-5 / max(1.0, np.abs(theta).max())
        e_hi = total_energy(make_profile(u.values + t * theta, s.params,
                                         "clamped"), s.ctx, ops)
        e_lo = total_energy(make_profile(u.values - t * theta, s.params,
                                         "clamped"), s.ctx, ops)
        fd = (e_hi - e_lo) / (2 * t)
        pairing = trapz(grad * theta, u.grid.h_x)
        assert fd == pytest.approx(pairing, rel=1e-4)


def test_projection_idempotent(std):
    rng = np.random.default_rng(1)
    v = rng.standard_normal(65) - 1.2
    once = project_admissible(v, std.params.H)
    assert np.array_equal(project_admissible(once, std.params.H), once)
    assert once.min() >= -std.params.H
    assert once[0] == 0.0 and once[-1] == 0.0


def test_minimize_zero_voltage_returns_flat_plate():
    s = Setup(V=0.0)
    rep = minimize_total_energy(bump_profile(s.params, s.nx, 0.4),
                                MinimizeOptions(max_outer_iters=50), s.ctx)
    assert rep.converged
    assert np.abs(rep.profile.values).max() <= 1e-9
    assert rep.final_energy == pytest.approx(0.0, abs=1e-12)
    assert rep.contact_fraction == 0.0


def test_minimize_small_voltage_separated():
    s = Setup(V=0.1, tol=1e-12)
    rep = minimize_total_energy(zero_profile(s.params, s.nx),
                                MinimizeOptions(max_outer_iters=60,
                                                grad_tol=1e-8), s.ctx)
    assert rep.converged
    assert rep.contact_fraction == 0.0
    assert rep.profile.values.min() < 0.0
    assert np.all(np.diff(rep.energy_trace) <= 0.0)
    assert rep.energy_trace[-1] < rep.energy_trace[0]
    assert rep.vi_max_violation <= 1e-6
    assert strong_form_residual(rep.profile, s.ctx) <= 1e-6
    assert rep.kappa is not None and rep.bbb_ok is not None


def test_minimize_beyond_pull_in_reaches_contact():
    s = Setup(V=2.0, beta=0.02, nx=96, tol=1e-12)
    rep = minimize_total_energy(zero_profile(s.params, 96),
                                MinimizeOptions(max_outer_iters=80,
                                                grad_tol=1e-4), s.ctx)
    assert rep.converged
    assert rep.contact_fraction > 0.0
    assert rep.profile.values.min() == -s.params.H
    assert np.all(np.diff(rep.energy_trace) <= 0.0)
    assert rep.vi_max_violation <= 1e-4
    # complementarity: on the contact set the gradient may only push down
    grad = total_gradient(rep.profile, s.ctx)
    on = rep.profile.contact_mask()
    assert np.all(grad[on] >= -1e-4)
    # frozen regression baseline for the reached equilibrium
    assert rep.final_energy == pytest.approx(-8.26262660, rel=1e-6)
    assert rep.contact_fraction == pytest.approx(0.4639, abs=0.02)


def test_minimize_emits_report_when_iteration_capped():
    s = Setup(V=2.0, beta=0.02, nx=48)
    rep = minimize_total_energy(zero_profile(s.params, 48),
                                MinimizeOptions(max_outer_iters=1), s.ctx)
    assert not rep.converged
    assert rep.iterations == 1
    assert rep.energy_trace.size >= 1


def test_vi_residual_zero_direction(std):
    u = bump_profile(std.params, std.nx, 0.2)
    assert vi_residual(u, [u.values.copy()], std.ctx) == 0.0


def test_vi_residual_flags_descent_direction():
    # far from equilibrium the inequality fails for profiles following
    # the Coulomb pull
    s = Setup(V=1.0, beta=0.05)
    u = zero_profile(s.params, s.nx)
    xi = u.grid.nodes / s.params.L
    w = project_admissible(-0.3 * s.params.H * (1 - xi**2) ** 2, s.params.H)
    assert vi_residual(u, [w], s.ctx) > 1e-2


def test_vi_residual_rejects_inadmissible(std):
    u = bump_profile(std.params, std.nx, 0.2)
    bad = np.full(std.nx + 1, -2.0 * std.params.H)
    with pytest.raises(InadmissibleTestDirection):
        vi_residual(u, [bad], std.ctx)
    crooked = u.values + 0.5
    with pytest.raises(InadmissibleTestDirection):
        vi_residual(u, [crooked], std.ctx)


def test_default_test_directions_admissible(std):
    u = bump_profile(std.params, std.nx, 0.3)
    for w in default_test_directions(u, std.params):
        assert w.min() >= -std.params.H
        assert w[0] == 0.0 and w[-1] == 0.0


def test_minimize_pinned_ends():
    # the pinned variant relaxes the end slopes; the equilibrium dips
    # deeper than the clamped one at the same voltage and still certifies
    s = Setup(V=0.1, tol=1e-12)
    pinned0 = make_profile(np.zeros(s.nx + 1), s.params, "pinned")
    rep_p = minimize_total_energy(pinned0, MinimizeOptions(max_outer_iters=60,
                                                           grad_tol=1e-8), s.ctx)
    rep_c = minimize_total_energy(zero_profile(s.params, s.nx),
                                  MinimizeOptions(max_outer_iters=60,
                                                  grad_tol=1e-8), s.ctx)
    assert rep_p.converged and rep_p.profile.bc_kind == "pinned"
    assert rep_p.vi_max_violation <= 1e-6
    assert rep_p.profile.values.min() < rep_c.profile.values.min() < 0.0


def test_gradient_consistency_pinned():
    s = Setup(V=0.1, beta=1.0, tau=0.3, tol=1e-12)
    x = make_grid(s.params.L, s.nx).nodes
    u = make_profile(-0.2 * s.params.H * np.sin(np.pi * (x + 1) / 2) ** 1,
                     s.params, "pinned")
    grad = total_gradient(u, s.ctx)
    ops = operators_for(u)
    theta = np.sin(np.pi * (x + 1) / 2)  # pinned-compatible direction
    t = 1e-5
    e_hi = total_energy(make_profile(u.values + t * theta, s.params, "pinned"),
                        s.ctx, ops)
    e_lo = total_energy(make_profile(u.values - t * theta, s.params, "pinned"),
                        s.ctx, ops)
    fd = (e_hi - e_lo) / (2 * t)
    assert fd == pytest.approx(trapz(grad * theta, u.grid.h_x), rel=1e-4)


def test_minimize_rejects_unconstrained_profiles(std):
    from memsim.geometry import uniform_profile
    with pytest.raises(ValueError):
        minimize_total_energy(uniform_profile(std.params, std.nx, 0.1),
                              MinimizeOptions(), std.ctx)


def test_minimize_options_validation():
    with pytest.raises(ValueError):
        MinimizeOptions(backtrack=1.5)
    with pytest.raises(ValueError):
        MinimizeOptions(max_outer_iters=0)
    with pytest.raises(ValueError):
        MinimizeOptions(grad_tol=0.0)


def test_minimize_resolution_override():
    s = Setup(V=0.1, nx=96)
    rep = minimize_total_energy(zero_profile(s.params, 48),
                                MinimizeOptions(max_outer_iters=40, nx=48),
                                s.ctx)
    assert rep.converged
    assert rep.profile.grid.n == 48
