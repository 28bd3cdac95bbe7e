"""Mapped-grid solver for the two-dielectric gap potential.

The layer rectangle D x (-d, 0) is the dielectric shifted vertically and
the gap rectangle D x (0, 1) is the region between interface and plate
rescaled by the local gap height H + u(x).  Both are discretized with
bilinear nodal elements on tensor grids; the vertical rescaling turns the
isotropic form on the gap into an anisotropic one with cross terms
proportional to the plate slope.  Interface nodes are shared between the
two rectangles wherever the plate is separated (flux continuity then
holds weakly) and pinned to the applied potential where it touches.

A single vertical rescaling of the whole device onto one rectangle would
avoid the split but bend the material interface off the grid lines; the
two-rectangle map is used precisely so the permittivity jump stays
grid-aligned and the flux condition needs no special treatment.

The solver object graph is immutable after construction; independent
solves may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import BoundaryFamily, PermittivityField
from .errors import DegenerateGap, GridMismatch, NoConvergence, NotSolved, TraceMismatch
from .geometry import DeviceParams, Profile, ReferenceGrids, make_reference_grids

GAP_FLOOR_FRACTION = 1.0e-6

_G0 = 0.5 - 0.5 / np.sqrt(3.0)
_G1 = 0.5 + 0.5 / np.sqrt(3.0)
_GP = np.array([(_G0, _G0), (_G1, _G0), (_G0, _G1), (_G1, _G1)])


@dataclass(frozen=True)
class SolverOptions:
    """Discretization and linear-solver settings."""

    nx: int = 256
    nz1: int = 64
    nz2: int = 128
    tol: float = 1.0e-10
    max_iter: int = 50_000
    eps_gap: Optional[float] = None

    def with_resolution(self, nx: int) -> "SolverOptions":
        """Scale the vertical resolutions along with nx (nz1=nx/4, nz2=nx/2)."""
        return replace(self, nx=nx, nz1=max(4, nx // 4), nz2=max(8, nx // 2))


@dataclass(frozen=True)
class ModelContext:
    """Bundle of everything a solve needs besides the profile."""

    params: DeviceParams
    family: BoundaryFamily
    perm: PermittivityField
    options: SolverOptions = SolverOptions()

    def grids(self) -> ReferenceGrids:
        return make_reference_grids(self.params, self.options.nx,
                                    self.options.nz1, self.options.nz2)

    def with_options(self, **kwargs) -> "ModelContext":
        return replace(self, options=replace(self.options, **kwargs))


@dataclass
class LinearSystem:
    """Assembled discrete transmission problem.

    `matrix` is the stiffness restricted to the free (non-Dirichlet)
    nodes; it is symmetric with strictly positive diagonal.  `stiffness`
    is the unrestricted form used for energies, `h_values` the nodal lift
    of the applied potential, and `rhs` the free-node right-hand side of
    the homogeneous-unknown formulation.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    h_values: np.ndarray
    stiffness: sp.csr_matrix
    grids: ReferenceGrids
    params: DeviceParams
    gap_floor: float
    profile_hash: str
    contact_mask: np.ndarray
    gap_scale: np.ndarray
    rhs_floor: float


@dataclass
class MappedPotential:
    """Solved potential stored on the reference rectangles.

    phi1[i, j] holds the potential at layer node (x_i, eta1_j) and
    phi2[i, j] at gap node (x_i, eta2_j); row j = 0 of phi2 coincides
    with the interface row of phi1.  `psi` is the flat nodal vector and
    `h_values` the nodal boundary lift, both over the shared numbering,
    together with the stiffness used to assemble them (so energies reuse
    the exact assembly quadrature).
    """

    phi1: np.ndarray
    phi2: np.ndarray
    grids: ReferenceGrids
    profile_hash: str
    gap_floor: float
    psi: np.ndarray
    h_values: np.ndarray
    stiffness: sp.csr_matrix
    free: np.ndarray
    gap_scale: np.ndarray
    contact_mask_nodes: np.ndarray
    params: DeviceParams
    iterations: int
    residual: float

    @property
    def solved(self) -> bool:
        return self.psi is not None

    def require_solved(self) -> None:
        if not self.solved:
            raise NotSolved("potential field has no solution attached")


@dataclass(frozen=True)
class TraceSet:
    """Vertical-derivative traces of the solved potential.

    dz_pot_plate    d_z psi on the plate graph (meaningful off contact)
    dz_pot_interface_lower   d_z psi at z = -H from the layer side
    dz_pot_ground   d_z psi at the grounded bottom z = -H - d
    ell             combined plate trace: dz_pot_plate off contact and
                    (sigma1/sigma2) * dz_pot_interface_lower on contact
    """

    x: np.ndarray
    dz_pot_plate: np.ndarray
    dz_pot_interface_lower: np.ndarray
    dz_pot_ground: np.ndarray
    ell: np.ndarray
    contact_mask: np.ndarray
    profile_hash: str


# ---------------------------------------------------------------------------
# Node numbering helpers.

def _node_counts(grids: ReferenceGrids) -> tuple[int, int]:
    n1 = (grids.nx + 1) * (grids.nz1 + 1)
    total = n1 + (grids.nx + 1) * grids.nz2
    return n1, total


def _layer_ids(grids: ReferenceGrids, i, j):
    return j * (grids.nx + 1) + i


def _gap_ids(grids: ReferenceGrids, i, j):
    """Gap node ids; row j = 0 aliases the layer interface row."""
    n1 = (grids.nx + 1) * (grids.nz1 + 1)
    j = np.asarray(j)
    return np.where(j == 0,
                    _layer_ids(grids, i, grids.nz1),
                    n1 + (j - 1) * (grids.nx + 1) + i)


def _cell_matrices(hx: float, he: float):
    """Per-Gauss-point outer-product blocks for the Q1 gradient form."""
    w = hx * he / 4.0
    m11, m22, m12 = [], [], []
    for s, t in _GP:
        gx = np.array([-(1 - t), (1 - t), -t, t]) / hx
        ge = np.array([-(1 - s), -s, (1 - s), s]) / he
        m11.append(np.outer(gx, gx))
        m22.append(np.outer(ge, ge))
        m12.append(np.outer(gx, ge) + np.outer(ge, gx))
    return w, np.array(m11), np.array(m22), np.array(m12)


def _assemble_rect(xs, etas, node_ids, coeff_fn):
    """COO triplets of the gradient form on one tensor-grid rectangle.

    node_ids(i, j) maps local grid indices to global node numbers and
    coeff_fn(xg, eg, ix) returns (a11, a12, a22) at Gauss points, arrays
    shaped (ncells, 4).
    """
    nx, nz = xs.size - 1, etas.size - 1
    hx = xs[1] - xs[0]
    he = etas[1] - etas[0]
    w, m11, m22, m12 = _cell_matrices(hx, he)

    ix, jz = np.meshgrid(np.arange(nx), np.arange(nz), indexing="ij")
    ix = ix.ravel()
    jz = jz.ravel()
    xg = xs[ix][:, None] + hx * _GP[:, 0][None, :]
    eg = etas[jz][:, None] + he * _GP[:, 1][None, :]

    a11, a12, a22 = coeff_fn(xg, eg, ix)
    ke = w * (np.einsum("cg,gij->cij", a11, m11)
              + np.einsum("cg,gij->cij", a22, m22)
              + np.einsum("cg,gij->cij", a12, m12))

    nodes = np.stack([node_ids(ix, jz), node_ids(ix + 1, jz),
                      node_ids(ix, jz + 1), node_ids(ix + 1, jz + 1)], axis=1)
    rows = np.repeat(nodes, 4, axis=1).ravel()
    cols = np.tile(nodes, (1, 4)).ravel()
    return rows, cols, ke.ravel()


# ---------------------------------------------------------------------------
# Assembly.

def default_gap_floor(profile: Profile) -> float:
    return max(profile.eps_c, GAP_FLOOR_FRACTION * profile.H)


def assemble(
    profile: Profile,
    family: BoundaryFamily,
    perm: PermittivityField,
    grids: ReferenceGrids,
    params: DeviceParams,
    eps_gap: Optional[float] = None,
) -> LinearSystem:
    """Assemble the discrete gradient form and boundary data for a profile.

    Gap heights below eps_gap are floored before building the vertical
    map, which keeps the form positive definite up to and including
    contact; interface nodes inside the contact set become Dirichlet
    rows carrying the applied plate potential.
    """
    if profile.grid.n != grids.nx or abs(profile.grid.half_width - grids.xs[-1]) > 1e-12:
        raise GridMismatch(
            f"profile grid (n={profile.grid.n}, L={profile.grid.half_width}) does not "
            f"match reference grids (nx={grids.nx}, L={grids.xs[-1]})"
        )
    if eps_gap is None:
        eps_gap = default_gap_floor(profile)
    if eps_gap <= 0.0:
        raise DegenerateGap(f"gap floor must be positive, got {eps_gap}")

    xs, e1, e2 = grids.xs, grids.eta1, grids.eta2
    H = params.H
    u = profile.values
    gap_nodal = np.maximum(H + u, eps_gap)
    s2 = perm.sigma2

    def layer_coeff(xg, eg, ix):
        s1 = perm.sigma1(xg, eg - H)
        return s1, np.zeros_like(s1), s1

    def gap_coeff(xg, eg, ix):
        frac = (xg - xs[ix][:, None]) / (xs[1] - xs[0])
        ug = gap_nodal[ix][:, None] * (1.0 - frac) + gap_nodal[ix + 1][:, None] * frac
        dug = ((gap_nodal[ix + 1] - gap_nodal[ix]) / (xs[1] - xs[0]))[:, None]
        a11 = s2 * ug
        a12 = -s2 * eg * dug
        a22 = s2 * (eg**2 * dug**2 + 1.0) / ug
        return a11, a12, np.broadcast_to(a22, a11.shape)

    n1, total = _node_counts(grids)
    r1, c1, v1 = _assemble_rect(xs, e1, lambda i, j: _layer_ids(grids, i, j), layer_coeff)
    r2, c2, v2 = _assemble_rect(xs, e2, lambda i, j: _gap_ids(grids, i, j), gap_coeff)
    stiffness = sp.coo_matrix(
        (np.concatenate([v1, v2]),
         (np.concatenate([r1, r2]), np.concatenate([c1, c2]))),
        shape=(total, total),
    ).tocsr()

    # Nodal lift of the applied potential over both rectangles.
    h_values = np.empty(total)
    Xl, El = np.meshgrid(xs, e1, indexing="xy")
    Wl = np.broadcast_to(u, Xl.shape)
    h_values[:n1] = np.asarray(family.eval1(Xl, El - H, Wl)).ravel()
    Xg, Eg = np.meshgrid(xs, e2[1:], indexing="xy")
    Zg = -H + Eg * np.broadcast_to(H + u, Xg.shape)
    Wg = np.broadcast_to(u, Xg.shape)
    h_values[n1:] = np.asarray(family.eval2(Xg, Zg, Wg)).ravel()

    free = np.ones(total, dtype=bool)
    all_i = np.arange(grids.nx + 1)
    all_j1 = np.arange(grids.nz1 + 1)
    free[_layer_ids(grids, all_i, 0)] = False                      # grounded bottom
    free[_gap_ids(grids, all_i, np.full_like(all_i, grids.nz2))] = False   # plate
    for side in (0, grids.nx):
        free[_layer_ids(grids, side, all_j1)] = False              # lateral walls
        free[np.asarray(_gap_ids(grids, side, np.arange(1, grids.nz2 + 1)))] = False
    contact_mask = profile.contact_mask()
    touch = np.flatnonzero(contact_mask)
    if touch.size:
        free[_layer_ids(grids, touch, grids.nz1)] = False          # pinned interface

    scale = np.abs(stiffness) @ np.abs(h_values)
    rhs_full = -(stiffness @ h_values)
    rhs = rhs_full[free]
    rhs_floor = 1.0e-13 * float(np.linalg.norm(scale[free])) + 1e-300

    matrix = stiffness[free][:, free].tocsr()
    if matrix.diagonal().min() <= 0.0:
        raise DegenerateGap("assembled form lost positivity on the free nodes")

    return LinearSystem(
        matrix=matrix, rhs=rhs, free=free, h_values=h_values,
        stiffness=stiffness, grids=grids, params=params,
        gap_floor=float(eps_gap), profile_hash=profile.fingerprint(),
        contact_mask=contact_mask, gap_scale=gap_nodal, rhs_floor=rhs_floor,
    )


# ---------------------------------------------------------------------------
# Linear solve.

def solve_potential(system: LinearSystem, tol: float = 1.0e-10,
                    max_iter: int = 50_000) -> MappedPotential:
    """Jacobi-preconditioned conjugate gradients on the free nodes.

    The relative residual target is `tol`; an absolute floor at the
    rounding level of the assembly matvec prevents stagnation when the
    boundary lift already solves the discrete problem.
    """
    b = system.rhs
    b_norm = float(np.linalg.norm(b))
    n_free = b.size
    chi = np.zeros(n_free)
    iterations = 0
    if b_norm > system.rhs_floor:
        diag = system.matrix.diagonal()
        precond = spla.LinearOperator((n_free, n_free), matvec=lambda v: v / diag)
        count = [0]

        def tick(_):
            count[0] += 1

        chi, info = spla.cg(system.matrix, b, rtol=tol, atol=system.rhs_floor,
                            maxiter=max_iter, M=precond, callback=tick)
        iterations = count[0]
        if info > 0:
            rel = float(np.linalg.norm(system.matrix @ chi - b) / b_norm)
            raise NoConvergence(iterations, rel)
        residual = float(np.linalg.norm(system.matrix @ chi - b) / b_norm)
    else:
        residual = 0.0  # lift already solves the discrete problem

    psi = system.h_values.copy()
    psi[system.free] += chi

    grids = system.grids
    n1, _ = _node_counts(grids)
    phi1 = psi[:n1].reshape(grids.nz1 + 1, grids.nx + 1).T.copy()
    upper = psi[n1:].reshape(grids.nz2, grids.nx + 1)
    phi2 = np.vstack([phi1[:, -1][None, :], upper]).T.copy()

    return MappedPotential(
        phi1=phi1, phi2=phi2, grids=grids, profile_hash=system.profile_hash,
        gap_floor=system.gap_floor, psi=psi, h_values=system.h_values,
        stiffness=system.stiffness, free=system.free,
        gap_scale=system.gap_scale, contact_mask_nodes=system.contact_mask,
        params=system.params, iterations=iterations, residual=residual,
    )


def solve_for_profile(profile: Profile, ctx: ModelContext,
                      grids: Optional[ReferenceGrids] = None) -> MappedPotential:
    """Assemble and solve in one step using the context's options."""
    if grids is None:
        grids = ctx.grids()
    system = assemble(profile, ctx.family, ctx.perm, grids, ctx.params,
                      eps_gap=ctx.options.eps_gap)
    return solve_potential(system, tol=ctx.options.tol, max_iter=ctx.options.max_iter)


# ---------------------------------------------------------------------------
# Traces and residual diagnostics.

def _one_sided_top(field: np.ndarray, h: float) -> np.ndarray:
    return (3.0 * field[:, -1] - 4.0 * field[:, -2] + field[:, -3]) / (2.0 * h)


def _one_sided_bottom(field: np.ndarray, h: float) -> np.ndarray:
    return (-3.0 * field[:, 0] + 4.0 * field[:, 1] - field[:, 2]) / (2.0 * h)


def extract_traces(potential: MappedPotential, profile: Profile,
                   perm: PermittivityField) -> TraceSet:
    """Second-order one-sided vertical derivatives on the three traces.

    Gap-side derivatives are rescaled by the (floored) local gap height
    to return to physical coordinates; at contact nodes the combined
    trace switches to the scaled layer-side derivative.
    """
    potential.require_solved()
    if potential.profile_hash != profile.fingerprint():
        raise TraceMismatch("potential was solved for a different profile")
    grids = potential.grids
    he1 = grids.eta1[1] - grids.eta1[0]
    he2 = grids.eta2[1] - grids.eta2[0]

    dz_plate = _one_sided_top(potential.phi2, he2) / potential.gap_scale
    dz_iface = _one_sided_top(potential.phi1, he1)
    dz_ground = _one_sided_bottom(potential.phi1, he1)

    contact = profile.contact_mask()
    s1_iface = np.asarray(perm.sigma1(grids.xs, np.full_like(grids.xs, -profile.H)))
    ell = np.where(contact, (s1_iface / perm.sigma2) * dz_iface, dz_plate)

    return TraceSet(
        x=grids.xs, dz_pot_plate=dz_plate, dz_pot_interface_lower=dz_iface,
        dz_pot_ground=dz_ground, ell=ell, contact_mask=contact,
        profile_hash=potential.profile_hash,
    )


def transmission_residual(potential: MappedPotential, perm: PermittivityField,
                          grids: ReferenceGrids) -> tuple[float, float, float]:
    """(value-jump, flux-jump, interior-residual) norms of a solved field.

    The value jump across the interface is identically zero because the
    interface unknowns are shared; the flux jump is the discrete L2 norm
    of the one-sided flux mismatch at separated interface nodes, and the
    interior residual is the free-node weak residual relative to the
    rounding scale of the assembly matvec.
    """
    potential.require_solved()
    he1 = grids.eta1[1] - grids.eta1[0]
    he2 = grids.eta2[1] - grids.eta2[0]
    hx = grids.xs[1] - grids.xs[0]

    jump_value = 0.0

    z_iface = np.full_like(grids.xs, -potential.params.H)
    flux_lower = np.asarray(perm.sigma1(grids.xs, z_iface))
    flux_lower = flux_lower * _one_sided_top(potential.phi1, he1)
    dphi2 = _one_sided_bottom(potential.phi2, he2)
    flux_upper = perm.sigma2 * dphi2 / potential.gap_scale
    off = ~potential.contact_mask_nodes
    diff = (flux_lower - flux_upper)[off]
    jump_flux = float(np.sqrt(hx * np.sum(diff**2)))

    r = (potential.stiffness @ potential.psi)[potential.free]
    scale = (np.abs(potential.stiffness) @ np.abs(potential.psi))[potential.free]
    interior = float(np.linalg.norm(r) / max(np.linalg.norm(scale), 1e-300))
    return jump_value, jump_flux, interior


def smallest_ritz_value(system: LinearSystem) -> float:
    """Smallest eigenvalue estimate of the free-node matrix (SPD check)."""
    k = spla.eigsh(system.matrix.tocsc(), k=1, sigma=0.0, which="LM",
                   return_eigenvectors=False)
    return float(k[0])
