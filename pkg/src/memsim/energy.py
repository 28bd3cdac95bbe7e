"""Stored field energy, plate energy, and the coercivity constant.

The field energy reuses the assembled stiffness form, so the discrete
minimizing property (solved energy never exceeds the energy of the
boundary lift) holds exactly, not just up to quadrature error.  The
plate energy is built from explicit difference operators whose adjoints
are available in closed form; the gradient used by the minimizer is the
exact derivative of this discrete functional.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .boundary import BoundaryFamily, PermittivityField
from .errors import MissingGrowthConstants
from .geometry import DeviceParams, Profile
from .transmission import MappedPotential


def trapz(values: np.ndarray, h: float) -> float:
    v = np.asarray(values, dtype=float)
    return float(h * (v.sum() - 0.5 * (v[0] + v[-1])))


# ---------------------------------------------------------------------------
# Plate difference operators.

@dataclass(frozen=True)
class PlateOperators:
    """Difference operators and quadrature weights for one plate grid.

    curvature   second difference at the nodes, end rows closed with the
                ghost reflection matching the end conditions (even for
                clamped ends, odd for pinned ends)
    slope       cell-midpoint first difference (n cells)
    weights     trapezoid node weights (length n+1, including h)
    cell_weights  uniform cell weights (length n, including h)
    fourth / second   exact trapezoid-pairing adjoints:
                trapz(fourth(u) * v) == sum_w curvature(u)*curvature(v)
                trapz(second(u) * v) == -sum_c slope(u)*slope(v)
                for every v vanishing at the ends.  Away from the ends
                these are the 5-point fourth difference and the 3-point
                second difference.
    """

    curvature: sp.csr_matrix
    slope: sp.csr_matrix
    weights: np.ndarray
    cell_weights: np.ndarray
    fourth: sp.csr_matrix
    second: sp.csr_matrix

    def bending_quadratic(self, u: np.ndarray) -> float:
        cu = self.curvature @ u
        return float(np.sum(self.weights * cu * cu))

    def stretch_quadratic(self, u: np.ndarray) -> float:
        su = self.slope @ u
        return float(np.sum(self.cell_weights * su * su))


def plate_operators(n: int, h: float, bc_kind: str) -> PlateOperators:
    m = n + 1
    main = np.full(m, -2.0)
    off = np.ones(m - 1)
    b2 = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if bc_kind == "clamped":
        b2[0, 1] = 2.0
        b2[m - 1, m - 2] = 2.0
    elif bc_kind in ("pinned", "free"):
        # Vanishing end curvature: odd ghost reflection for pinned ends,
        # and no end penalty at all for unconstrained diagnostic profiles.
        b2[0, :] = 0.0
        b2[m - 1, :] = 0.0
    else:
        raise ValueError(f"unknown bc_kind {bc_kind!r}")
    b2 = sp.csr_matrix(b2 / (h * h))

    b1 = sp.diags([-np.ones(m), np.ones(m - 1)], [0, 1], shape=(m - 1, m),
                  format="csr") / h

    weights = np.full(m, h)
    weights[0] = weights[-1] = 0.5 * h
    cell_weights = np.full(m - 1, h)

    w_inv = sp.diags(1.0 / weights)
    fourth = (w_inv @ b2.T @ sp.diags(weights) @ b2).tolil()
    second = (-(w_inv @ b1.T @ sp.diags(cell_weights) @ b1)).tolil()
    # End nodes are pinned degrees of freedom; their gradient rows are
    # never paired with admissible directions.
    for row in (0, m - 1):
        fourth[row, :] = 0.0
        second[row, :] = 0.0
    return PlateOperators(
        curvature=b2, slope=b1, weights=weights, cell_weights=cell_weights,
        fourth=sp.csr_matrix(fourth), second=sp.csr_matrix(second),
    )


def operators_for(profile: Profile) -> PlateOperators:
    return plate_operators(profile.grid.n, profile.grid.h_x, profile.bc_kind)


# ---------------------------------------------------------------------------
# Energies.

def mechanical_energy(profile: Profile, params: DeviceParams,
                      ops: Optional[PlateOperators] = None) -> float:
    """Bending plus stretching energy of the plate.

    (beta/2) ||u''||^2 + (tau/2 + (a/4) ||u'||^2) ||u'||^2 with the node
    trapezoid rule for the curvature term and the cell rule for the
    slope term (the exact first-derivative energy of the piecewise
    linear interpolant).
    """
    if ops is None:
        ops = operators_for(profile)
    u = profile.values
    bend = ops.bending_quadratic(u)
    stretch = ops.stretch_quadratic(u)
    return (0.5 * params.beta * bend
            + (0.5 * params.tau + 0.25 * params.a * stretch) * stretch)


def dirichlet_energy(potential: MappedPotential) -> float:
    """Half the stiffness quadratic form of the solved potential."""
    potential.require_solved()
    return 0.5 * float(potential.psi @ (potential.stiffness @ potential.psi))


def dirichlet_upper_bound(potential: MappedPotential) -> float:
    """The same form evaluated on the boundary lift (never smaller)."""
    h = potential.h_values
    return 0.5 * float(h @ (potential.stiffness @ h))


# ---------------------------------------------------------------------------
# Coercivity arithmetic.

def coercivity_kappa(params: DeviceParams, family: BoundaryFamily,
                     perm: PermittivityField) -> float:
    """beta - 4 L^2 [ (d+1) sigma_max (12 m2 L^2 + 2 m3) - tau ]_+ ."""
    if not family.has_growth_constants:
        raise MissingGrowthConstants(
            f"family {family.family_id!r} carries no growth constants"
        )
    bracket = ((params.d + 1.0) * perm.sigma_max
               * (12.0 * family.m2 * params.L**2 + 2.0 * family.m3) - params.tau)
    return params.beta - 4.0 * params.L**2 * max(bracket, 0.0)


def condition_bbb(params: DeviceParams, kappa: float) -> bool:
    """Coercivity condition: the quartic coefficient or kappa is positive."""
    return max(params.a, kappa) > 0.0


def energy_lower_bound(profile: Profile, params: DeviceParams,
                       family: BoundaryFamily, perm: PermittivityField) -> float:
    """Closed-form lower bound on the total energy at this profile.

    (beta/2)||u''||^2 + (a/4)||u'||^4 - (3(d+1)/2) sigma_max m1 |D|
    - [ ((d+1)/2) sigma_max (3 m2 |D|^2 + 2 m3) - tau/2 ]_+ ||u'||^2,
    evaluated with the same discrete norms as the plate energy.
    """
    if not family.has_growth_constants:
        raise MissingGrowthConstants(
            f"family {family.family_id!r} carries no growth constants"
        )
    ops = operators_for(profile)
    bend = ops.bending_quadratic(profile.values)
    stretch = ops.stretch_quadratic(profile.values)
    size = 2.0 * params.L
    bracket = max(0.5 * (params.d + 1.0) * perm.sigma_max
                  * (3.0 * family.m2 * size**2 + 2.0 * family.m3)
                  - 0.5 * params.tau, 0.0)
    return (0.5 * params.beta * bend + 0.25 * params.a * stretch**2
            - 1.5 * (params.d + 1.0) * perm.sigma_max * family.m1 * size
            - bracket * stretch)


# ---------------------------------------------------------------------------
# Report.

@dataclass(frozen=True)
class EnergyReport:
    """Energy bookkeeping for one solved configuration.

    electro = -dirichlet and total = mech + electro by construction;
    dirichlet never exceeds upper_bound (shared quadrature).  kappa is
    None when the family carries no growth constants.
    """

    dirichlet: float
    mech: float
    electro: float
    total: float
    upper_bound: float
    kappa: Optional[float]

    def to_dict(self) -> dict:
        out = {
            "dirichlet": self.dirichlet,
            "mech": self.mech,
            "electro": self.electro,
            "total": self.total,
            "upper_bound": self.upper_bound,
        }
        if self.kappa is not None:
            out["kappa"] = self.kappa
        return out


def energy_report(profile: Profile, potential: MappedPotential,
                  params: DeviceParams, family: BoundaryFamily,
                  perm: PermittivityField) -> EnergyReport:
    dirich = dirichlet_energy(potential)
    mech = mechanical_energy(profile, params)
    kappa = (coercivity_kappa(params, family, perm)
             if family.has_growth_constants else None)
    return EnergyReport(
        dirichlet=dirich,
        mech=mech,
        electro=-dirich,
        total=mech - dirich,
        upper_bound=dirichlet_upper_bound(potential),
        kappa=kappa,
    )
