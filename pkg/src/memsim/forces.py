"""Electrostatic force densities and the shape derivative of the field energy.

The derivative of the stored field energy with respect to the plate
profile is a boundary density: a weighted square of the bracket

    d_z psi  -  (d_z h_upper)  -  (d_w h_upper)

traced along the plate where it is separated, with the layer-side trace
substituted where it touches.  For grounded-bottom / constant-plate
families the bracket's data terms vanish identically and the density
reduces to the Coulomb pressure used by the plate equilibrium problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryFamily, PermittivityField
from .energy import dirichlet_energy, trapz
from .errors import BCMismatch, FamilyNotMEMS, TraceMismatch
from .geometry import Profile, make_profile
from .transmission import ModelContext, TraceSet, solve_for_profile

_FORCE_MATCH_RTOL = 1.0e-8


@dataclass(frozen=True)
class ForceDensity:
    """Force per unit plate length at the x-nodes.

    `values` is non-negative for plate-at-constant-potential data; the
    regime tag records which trace fed each node.  `components` keeps
    the bracket ingredients for diagnostics: the plate trace, the two
    data partials, and the scaled layer-side trace.
    """

    x: np.ndarray
    values: np.ndarray
    contact_mask: np.ndarray
    components: dict
    profile_hash: str

    def regimes(self) -> list[str]:
        return ["contact" if c else "off-contact" for c in self.contact_mask]


def _check_traces(traces: TraceSet, profile: Profile) -> None:
    if traces.profile_hash != profile.fingerprint():
        raise TraceMismatch("traces belong to a different profile")


def _plate_partials(profile: Profile, family: BoundaryFamily):
    """Data partials traced along the plate, (d/dx, d/dz, d/dw) at (x,u,u)."""
    x = profile.grid.nodes
    u = profile.values
    return family.partials2(x, u, u)


def shape_force_density(traces: TraceSet, profile: Profile,
                        family: BoundaryFamily, perm: PermittivityField) -> np.ndarray:
    """Shape-derivative density of the field energy for general data.

    Off contact:  (s2/2)(1 + u'^2) [dz_pot_plate - hz - hw]^2 at (x, u)
    On contact:   (s2/2) [(s1/s2) dz_pot_interface_lower - hz - hw]^2 at z = -H
    """
    _check_traces(traces, profile)
    _, hz, hw = _plate_partials(profile, family)
    s2 = perm.sigma2
    s1 = np.asarray(perm.sigma1(profile.grid.nodes,
                                np.full_like(profile.grid.nodes, -profile.H)))
    off_bracket = traces.dz_pot_plate - hz - hw
    on_bracket = (s1 / s2) * traces.dz_pot_interface_lower - hz - hw
    off_value = 0.5 * s2 * (1.0 + profile.du**2) * off_bracket**2
    on_value = 0.5 * s2 * on_bracket**2
    return np.where(traces.contact_mask, on_value, off_value)


def electrostatic_force_density(traces: TraceSet, profile: Profile,
                                family: BoundaryFamily, perm: PermittivityField,
                                check: bool = True) -> ForceDensity:
    """Coulomb force density on the plate for MEMS-type data.

    Off contact:  (s2/2)(1 + u'^2) (dz_pot_plate)^2
    On contact:   (s1^2 / (2 s2)) (dz_pot_interface_lower)^2

    When `check` is set the result is compared nodewise against the
    general shape-derivative density, which it must match whenever the
    family's plate/ground identities hold.
    """
    if not family.mems:
        raise FamilyNotMEMS(
            f"family {family.family_id!r} lacks the constant-plate structure"
        )
    _check_traces(traces, profile)
    s2 = perm.sigma2
    s1 = np.asarray(perm.sigma1(profile.grid.nodes,
                                np.full_like(profile.grid.nodes, -profile.H)))
    off_value = 0.5 * s2 * (1.0 + profile.du**2) * traces.dz_pot_plate**2
    on_value = (s1**2 / (2.0 * s2)) * traces.dz_pot_interface_lower**2
    values = np.where(traces.contact_mask, on_value, off_value)

    _, hz, hw = _plate_partials(profile, family)
    components = {
        "dz_pot_plate": traces.dz_pot_plate,
        "dh_dz": hz,
        "dh_dw": hw,
        "scaled_lower_trace": (s1 / s2) * traces.dz_pot_interface_lower,
    }
    if check:
        general = shape_force_density(traces, profile, family, perm)
        scale = max(float(np.abs(general).max()), float(np.abs(values).max()), 1e-300)
        gap = float(np.abs(general - values).max())
        if gap > _FORCE_MATCH_RTOL * scale:
            raise TraceMismatch(
                f"force density deviates from the shape-derivative density by "
                f"{gap:.3e} (scale {scale:.3e}); the family's plate/ground "
                f"identities do not hold"
            )
    return ForceDensity(
        x=profile.grid.nodes, values=values,
        contact_mask=traces.contact_mask.copy(),
        components=components, profile_hash=traces.profile_hash,
    )


# ---------------------------------------------------------------------------
# Directional derivative of the field energy.

def _direction_values(direction, profile: Profile) -> np.ndarray:
    if isinstance(direction, Profile):
        if direction.bc_kind != profile.bc_kind:
            raise BCMismatch(
                f"direction has bc_kind {direction.bc_kind!r}, profile "
                f"{profile.bc_kind!r}"
            )
        theta = direction.values
    else:
        theta = np.asarray(direction, dtype=float)
    if theta.shape != profile.values.shape:
        raise BCMismatch("direction and profile live on different grids")
    if profile.bc_kind in ("clamped", "pinned"):
        scale = max(1.0, float(np.abs(theta).max()))
        if max(abs(theta[0]), abs(theta[-1])) > 1e-10 * scale:
            raise BCMismatch("direction must vanish at the plate ends")
    return theta


def shape_derivative(profile: Profile, direction, traces: TraceSet,
                     family: BoundaryFamily, perm: PermittivityField,
                     params) -> float:
    """Analytic directional derivative of the field energy.

        -∫ g_shape θ
        + (s2/2) ∫ [hx^2 + (hz + hw)^2](x, u, u) θ
        - ∫ s1 (d_w h_lower) dz_pot_ground θ   at z = -H - d

    with trapezoid quadrature on the plate grid.  For MEMS-type data the
    last two integrals vanish identically.
    """
    theta = _direction_values(direction, profile)
    x = profile.grid.nodes
    h = profile.grid.h_x
    density = shape_force_density(traces, profile, family, perm)

    hx, hz, hw = _plate_partials(profile, family)
    boundary_term = 0.5 * perm.sigma2 * (hx**2 + (hz + hw) ** 2)

    z_bottom = np.full_like(x, -params.H - params.d)
    s1_bottom = np.asarray(perm.sigma1(x, z_bottom))
    hw_bottom = family.partials1(x, z_bottom, profile.values)[2]
    ground_term = s1_bottom * hw_bottom * traces.dz_pot_ground

    integrand = -density * theta + boundary_term * theta - ground_term * theta
    return trapz(integrand, h)


def fd_shape_derivative(profile: Profile, direction, t: float, ctx: ModelContext,
                        scheme: str = "forward",
                        base_energy: float | None = None) -> float:
    """Difference-quotient check of the energy derivative via full solves.

    forward: (J(u + tθ) - J(u)) / t        (one-sided, valid at contact)
    central: (J(u + tθ) - J(u - tθ)) / 2t  (interior profiles only)
    """
    if t <= 0.0:
        raise ValueError("step t must be positive")
    theta = _direction_values(direction, profile)

    def energy_at(values: np.ndarray) -> float:
        # make_profile rejects inadmissible perturbed profiles
        shifted = make_profile(values, ctx.params, profile.bc_kind,
                               eps_c=profile.eps_c)
        return dirichlet_energy(solve_for_profile(shifted, ctx))

    if scheme == "forward":
        if base_energy is None:
            base_energy = dirichlet_energy(solve_for_profile(profile, ctx))
        return (energy_at(profile.values + t * theta) - base_energy) / t
    if scheme == "central":
        plus = energy_at(profile.values + t * theta)
        minus = energy_at(profile.values - t * theta)
        return (plus - minus) / (2.0 * t)
    raise ValueError(f"unknown scheme {scheme!r}")
