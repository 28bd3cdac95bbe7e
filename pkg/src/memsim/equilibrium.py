"""Constrained minimization of the total plate energy and its certification.

The total energy is the plate energy minus the stored field energy; its
derivative with respect to the nodal profile is the exact mechanical
gradient plus the Coulomb force density from a fresh field solve (the
force IS the derivative of the field part, so no extra terms appear).
Minimization runs a projected descent with the pointwise obstacle
u >= -H, an Armijo backtracking line search on the discrete energy, and
an optional mechanical-Hessian preconditioner that removes the fourth-
order stiffness from the step-size restriction.  The first-order
optimality of a converged iterate is certified through the variational
inequality over a set of admissible test profiles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import (PlateOperators, coercivity_kappa, condition_bbb,
                     dirichlet_energy, mechanical_energy, operators_for, trapz)
from .errors import InadmissibleTestDirection
from .forces import ForceDensity, electrostatic_force_density
from .geometry import Profile, make_profile
from .transmission import ModelContext, extract_traces, solve_for_profile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MinimizeOptions:
    """Outer-loop settings for the energy descent.

    step0 scales the initial trial step (multiplying h^4/beta when the
    raw-gradient flow is used, and 1 when preconditioning).  nx, when
    set, overrides the context resolution for the whole minimization.
    """

    max_outer_iters: int = 200
    step0: float = 1.0
    backtrack: float = 0.5
    grad_tol: float = 1.0e-8
    vi_tol: float = 1.0e-6
    nx: Optional[int] = None
    precondition: bool = True
    armijo: float = 1.0e-4
    max_backtracks: int = 25

    def __post_init__(self):
        if self.max_outer_iters <= 0 or self.step0 <= 0.0:
            raise ValueError("iteration count and initial step must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.grad_tol <= 0.0 or self.vi_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class EquilibriumReport:
    """Outcome of one energy minimization.

    energy_trace is non-increasing by construction of the line search;
    vi_max_violation is the certified first-order residual over the
    default test-direction set (positive values violate the inequality).
    """

    profile: Profile
    energy_trace: np.ndarray
    grad_norm_trace: np.ndarray
    contact_trace: np.ndarray
    vi_max_violation: float
    contact_fraction: float
    converged: bool
    iterations: int
    kappa: Optional[float]
    bbb_ok: Optional[bool]
    final_energy: float
    final_grad_norm: float

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_energy": self.final_energy,
            "final_grad_norm": self.final_grad_norm,
            "vi_max_violation": self.vi_max_violation,
            "contact_fraction": self.contact_fraction,
            "min_deflection": float(self.profile.values.min()),
            "kappa": self.kappa,
            "bbb_ok": self.bbb_ok,
        }


@dataclass
class _State:
    profile: Profile
    energy: float
    field_energy: float
    force: ForceDensity
    gradient: np.ndarray


# ---------------------------------------------------------------------------
# Gradient of the discrete total energy.

def total_gradient(profile: Profile, ctx: ModelContext,
                   ops: Optional[PlateOperators] = None,
                   force: Optional[ForceDensity] = None) -> np.ndarray:
    """beta*D4 u - (tau + a ||u'||^2)*D2 u + g(u), zero at the pinned ends.

    D4/D2 are the exact trapezoid-pairing adjoints of the plate energy
    quadrature, so this array is the exact derivative of the discrete
    mechanical energy; g comes from a fresh field solve unless supplied.
    """
    if ops is None:
        ops = operators_for(profile)
    if force is None:
        potential = solve_for_profile(profile, ctx)
        traces = extract_traces(potential, profile, ctx.perm)
        force = electrostatic_force_density(traces, profile, ctx.family, ctx.perm)
    u = profile.values
    stretch = ops.stretch_quadratic(u)
    grad = (ctx.params.beta * (ops.fourth @ u)
            - (ctx.params.tau + ctx.params.a * stretch) * (ops.second @ u)
            + force.values)
    grad[0] = 0.0
    grad[-1] = 0.0
    return grad


def _evaluate(profile: Profile, ctx: ModelContext, ops: PlateOperators) -> _State:
    potential = solve_for_profile(profile, ctx)
    traces = extract_traces(potential, profile, ctx.perm)
    force = electrostatic_force_density(traces, profile, ctx.family, ctx.perm)
    J = dirichlet_energy(potential)
    E = mechanical_energy(profile, ctx.params, ops) - J
    grad = total_gradient(profile, ctx, ops=ops, force=force)
    return _State(profile=profile, energy=E, field_energy=J,
                  force=force, gradient=grad)


def total_energy(profile: Profile, ctx: ModelContext,
                 ops: Optional[PlateOperators] = None) -> float:
    if ops is None:
        ops = operators_for(profile)
    J = dirichlet_energy(solve_for_profile(profile, ctx))
    return mechanical_energy(profile, ctx.params, ops) - J


# ---------------------------------------------------------------------------
# Projection and optimality measures.

def project_admissible(values: np.ndarray, H: float) -> np.ndarray:
    """Pointwise obstacle projection followed by re-pinned end rows."""
    out = np.maximum(values, -H)
    out[0] = 0.0
    out[-1] = 0.0
    return out


def projected_gradient(grad: np.ndarray, profile: Profile) -> np.ndarray:
    """First-order residual: full gradient where separated, its negative
    part where the obstacle is active (pushing further down is blocked)."""
    active = profile.contact_mask()
    pg = np.where(active, np.minimum(grad, 0.0), grad)
    pg[0] = 0.0
    pg[-1] = 0.0
    return pg


def _mech_hessian(ops: PlateOperators, params, stretch: float) -> sp.csc_matrix:
    w = sp.diags(ops.weights)
    qc = sp.diags(ops.cell_weights)
    a = (params.beta * (ops.curvature.T @ w @ ops.curvature)
         + (params.tau + params.a * stretch) * (ops.slope.T @ qc @ ops.slope))
    return a.tocsc()


def _newton_direction(state: _State, ops: PlateOperators, params,
                      interior: np.ndarray) -> np.ndarray:
    """Mechanical-Hessian solve on the free set of a projected-Newton step.

    Nodes pressed onto the obstacle (touching with a downhill gradient)
    are excluded from the solve and keep their raw gradient; projection
    returns them to the bound.  The Coulomb pull stiffens like force/gap
    as the plate approaches the layer; its magnitude is added to the
    diagonal as damping so near-contact steps stay inside the basin the
    quadratic model is good for.
    """
    grad = state.gradient
    pinned = state.profile.contact_mask() & (grad > 0.0)
    solve_set = interior[~pinned[interior]]
    direction = grad.copy()
    if solve_set.size:
        hess = _mech_hessian(ops, params,
                             ops.stretch_quadratic(state.profile.values))
        rhs = (ops.weights * grad)[solve_set]
        direction[solve_set] = spla.spsolve(
            hess.tocsc()[solve_set][:, solve_set], rhs)
    return direction


def _jacobi_direction(state: _State, ops: PlateOperators, params) -> np.ndarray:
    """Diagonally scaled gradient: removes the h^-4 stiffness limit of a
    raw step without committing to the global quadratic model."""
    hess = _mech_hessian(ops, params,
                         ops.stretch_quadratic(state.profile.values))
    diag = np.asarray(hess.diagonal())
    diag = np.where(diag > 0.0, diag, 1.0)
    return ops.weights * state.gradient / diag


def minimize_total_energy(initial: Profile, opts: MinimizeOptions,
                          ctx: ModelContext) -> EquilibriumReport:
    """Projected descent on the discrete total energy.

    Each outer iteration solves the field problem once at the current
    iterate (for energy, force, and gradient) and once per line-search
    trial.  The report is emitted whether or not the gradient tolerance
    was reached; converged=False marks the latter case.
    """
    if initial.bc_kind not in ("clamped", "pinned"):
        raise ValueError("minimization requires clamped or pinned end conditions")
    if opts.nx is not None and opts.nx != ctx.options.nx:
        ctx = ctx.with_options(nx=opts.nx, nz1=max(4, opts.nx // 4),
                               nz2=max(8, opts.nx // 2))
    params = ctx.params
    u0 = project_admissible(initial.values.copy(), params.H)
    profile = make_profile(u0, params, initial.bc_kind, eps_c=initial.eps_c)
    ops = operators_for(profile)

    kappa = bbb_ok = None
    if ctx.family.has_growth_constants:
        kappa = coercivity_kappa(params, ctx.family, ctx.perm)
        bbb_ok = condition_bbb(params, kappa)
        if not bbb_ok:
            logger.warning(
                "coercivity condition fails (kappa=%.6g, a=%.6g); the energy "
                "may be unbounded below, proceeding anyway", kappa, params.a,
            )

    state = _evaluate(profile, ctx, ops)
    energy_trace = [state.energy]
    grad_trace = []
    contact_trace = []
    interior = np.arange(1, profile.grid.n)
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_outer_iters + 1):
        pg = projected_gradient(state.gradient, state.profile)
        pg_norm = float(np.abs(pg).max())
        grad_trace.append(pg_norm)
        contact_trace.append(_contact_fraction(state.profile))
        if pg_norm <= opts.grad_tol:
            converged = True
            break

        raw_step = opts.step0 * profile.grid.h_x**4 / params.beta
        attempts = []
        if opts.precondition:
            attempts.append(("newton", _newton_direction(state, ops, params,
                                                         interior), opts.step0))
            attempts.append(("jacobi", _jacobi_direction(state, ops, params),
                             opts.step0))
        attempts.append(("gradient", state.gradient, raw_step))

        accepted = None
        for _, direction, step in attempts:
            for _ in range(opts.max_backtracks):
                trial_values = project_admissible(
                    state.profile.values - step * direction, params.H)
                decrease_pairing = float(
                    np.sum(ops.weights * state.gradient
                           * (state.profile.values - trial_values)))
                trial = make_profile(trial_values, params, state.profile.bc_kind,
                                     eps_c=state.profile.eps_c)
                trial_state = _evaluate(trial, ctx, ops)
                if (decrease_pairing > 0.0
                        and trial_state.energy
                        <= state.energy - opts.armijo * decrease_pairing):
                    accepted = trial_state
                    break
                step *= opts.backtrack
            if accepted is not None:
                break
        if accepted is None:
            logger.warning("line search failed at iteration %d", iterations)
            break
        state = accepted
        energy_trace.append(state.energy)

    final_pg = projected_gradient(state.gradient, state.profile)
    final_norm = float(np.abs(final_pg).max())
    if not grad_trace or grad_trace[-1] != final_norm:
        grad_trace.append(final_norm)
        contact_trace.append(_contact_fraction(state.profile))
    if not converged and final_norm <= opts.grad_tol:
        converged = True

    directions = default_test_directions(state.profile, params)
    vi_max = vi_residual(state.profile, directions, ctx, force=state.force, ops=ops)

    return EquilibriumReport(
        profile=state.profile,
        energy_trace=np.asarray(energy_trace),
        grad_norm_trace=np.asarray(grad_trace),
        contact_trace=np.asarray(contact_trace),
        vi_max_violation=vi_max,
        contact_fraction=_contact_fraction(state.profile),
        converged=converged,
        iterations=iterations,
        kappa=kappa,
        bbb_ok=bbb_ok,
        final_energy=state.energy,
        final_grad_norm=final_norm,
    )


def _contact_fraction(profile: Profile) -> float:
    return float(profile.contact_mask().mean())


# ---------------------------------------------------------------------------
# Variational-inequality certification.

def default_test_directions(profile: Profile, params) -> list[np.ndarray]:
    """Admissible comparison profiles: rest state, rescalings of the
    iterate, and obstacle-projected bump perturbations."""
    u = profile.values
    xi = profile.grid.nodes / params.L
    bump = (1.0 - xi**2) ** 2
    candidates = [
        np.zeros_like(u),
        project_admissible(0.5 * u, params.H),
        project_admissible(1.5 * u, params.H),
        project_admissible(u + 0.25 * params.H * bump, params.H),
        project_admissible(u - 0.25 * params.H * bump, params.H),
    ]
    return candidates


def vi_residual(profile: Profile, test_directions: Sequence, ctx: ModelContext,
                force: Optional[ForceDensity] = None,
                ops: Optional[PlateOperators] = None) -> float:
    """Max violation of the first-order inequality over the test set.

    For each admissible w the certified quantity is

        -[ beta <u'', (w-u)''> + (tau + a||u'||^2) <u', (w-u)'>
           + ∫ g(u) (w-u) ]

    which must be <= 0 (up to tolerance) at a minimizer.  Test profiles
    must respect the obstacle and the end conditions.
    """
    if ops is None:
        ops = operators_for(profile)
    if force is None:
        potential = solve_for_profile(profile, ctx)
        traces = extract_traces(potential, profile, ctx.perm)
        force = electrostatic_force_density(traces, profile, ctx.family, ctx.perm)
    params = ctx.params
    u = profile.values
    stretch = ops.stretch_quadratic(u)
    cu = ops.curvature @ u
    su = ops.slope @ u

    worst = -np.inf
    for w in test_directions:
        w = w.values if isinstance(w, Profile) else np.asarray(w, dtype=float)
        if w.shape != u.shape:
            raise InadmissibleTestDirection("test profile lives on a different grid")
        if w.min() < -params.H - 1e-12:
            raise InadmissibleTestDirection("test profile dips below the obstacle")
        if profile.bc_kind in ("clamped", "pinned") and (
                abs(w[0]) > 1e-12 or abs(w[-1]) > 1e-12):
            raise InadmissibleTestDirection("test profile must vanish at the ends")
        delta = w - u
        mech = (params.beta * np.sum(ops.weights * cu * (ops.curvature @ delta))
                + (params.tau + params.a * stretch)
                * np.sum(ops.cell_weights * su * (ops.slope @ delta)))
        coulomb = trapz(force.values * delta, profile.grid.h_x)
        worst = max(worst, -(mech + coulomb))
    return float(worst)


def interior_bumps(profile: Profile, count: int = 7) -> list[np.ndarray]:
    """Compactly supported C^1 bumps spread over the interior."""
    x = profile.grid.nodes
    L = profile.grid.half_width
    centers = np.linspace(-0.6 * L, 0.6 * L, count)
    width = 0.35 * L
    bumps = []
    for c in centers:
        phi = np.clip(1.0 - ((x - c) / width) ** 2, 0.0, None) ** 2
        bumps.append(phi)
    return bumps


def strong_form_residual(profile: Profile, ctx: ModelContext,
                         gradient: Optional[np.ndarray] = None,
                         count: int = 7) -> float:
    """Max |bump-weighted mean| of beta*D4 u - (tau+a||u'||^2)*D2 u + g.

    At a separated equilibrium this is the pointwise force balance
    tested against interior bumps; each residual is normalized by the
    bump mass so the value has force-density units.
    """
    if gradient is None:
        gradient = total_gradient(profile, ctx)
    h = profile.grid.h_x
    worst = 0.0
    for phi in interior_bumps(profile, count):
        worst = max(worst, abs(trapz(gradient * phi, h)) / trapz(phi, h))
    return worst
