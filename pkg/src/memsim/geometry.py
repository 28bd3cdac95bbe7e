"""Device geometry: parameters, plate profiles, grids, and contact detection.

The device occupies the strip (-L, L) in x.  A rigid ground plate sits at
z = -H - d, a dielectric layer fills -H - d < z < -H, and the deformable
plate is the graph of u(x) with u >= -H.  All objects here are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityViolation, BoundaryConditionViolation

PROFILE_CSV_MAGIC = "# memsim-profile v1"

#: End-condition kinds for the plate.  "clamped" pins value and slope at
#: x = +-L, "pinned" pins value and curvature, "free" skips the end check
#: entirely (diagnostic profiles such as uniform offsets).
BC_KINDS = ("clamped", "pinned", "free")

# Absolute tolerance on end values, and default contact threshold as a
# fraction of the gap height.
_BC_ATOL = 1.0e-12
CONTACT_THRESHOLD_FRACTION = 1.0e-8


@dataclass(frozen=True)
class DeviceParams:
    """Physical and geometric constants of the device.

    H      gap height (> 0); the plate may descend to z = -H but not below
    L      half-width of the device (> 0)
    d      dielectric layer thickness (> 0)
    sigma2 permittivity of the gap region above the layer (> 0)
    V      potential applied on the plate (>= 0); the ground plate is at 0
    beta   bending stiffness of the plate (> 0)
    tau    linear stretching coefficient (>= 0)
    a      quartic stretching coefficient (>= 0)
    """

    H: float
    L: float
    d: float
    sigma2: float
    V: float = 0.0
    beta: float = 1.0
    tau: float = 0.0
    a: float = 0.0

    def __post_init__(self):
        strict = {"H": self.H, "L": self.L, "d": self.d,
                  "sigma2": self.sigma2, "beta": self.beta}
        for name, value in strict.items():
            if not value > 0.0:
                raise ValueError(f"DeviceParams.{name} must be > 0, got {value}")
        weak = {"V": self.V, "tau": self.tau, "a": self.a}
        for name, value in weak.items():
            if not value >= 0.0:
                raise ValueError(f"DeviceParams.{name} must be >= 0, got {value}")

    @property
    def contact_threshold(self) -> float:
        """Default tolerance below which u + H counts as touching."""
        return CONTACT_THRESHOLD_FRACTION * self.H


@dataclass(frozen=True)
class Grid1D:
    """Uniform node grid on [-L, L] with n cells and n+1 nodes."""

    n: int
    nodes: np.ndarray
    h_x: float

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("Grid1D needs at least 4 cells")
        if self.nodes.shape != (self.n + 1,):
            raise ValueError("Grid1D.nodes must have n+1 entries")
        if not np.all(np.diff(self.nodes) > 0.0):
            raise ValueError("Grid1D.nodes must be strictly increasing")
        self.nodes.setflags(write=False)

    @property
    def half_width(self) -> float:
        return float(self.nodes[-1])


def make_grid(L: float, n: int) -> Grid1D:
    nodes = np.linspace(-L, L, n + 1)
    return Grid1D(n=n, nodes=nodes, h_x=2.0 * L / n)


def d1_array(values: np.ndarray, h: float) -> np.ndarray:
    """First derivative: centered interior, one-sided second-order ends."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return out


def d2_array(values: np.ndarray, h: float) -> np.ndarray:
    """Second derivative: centered interior, one-sided second-order ends."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h)
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / (h * h)
    return out


def contact_ranges(values: np.ndarray, H: float, eps_c: float) -> tuple[tuple[int, int], ...]:
    """Maximal index ranges (start, stop inclusive) where u + H <= eps_c."""
    if eps_c < 0.0:
        raise ValueError("contact threshold must be >= 0")
    mask = np.asarray(values) + H <= eps_c
    if not mask.any():
        return ()
    idx = np.flatnonzero(mask)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    stops = np.concatenate((breaks, [idx.size - 1]))
    return tuple((int(idx[a]), int(idx[b])) for a, b in zip(starts, stops))


@dataclass(frozen=True)
class Profile:
    """Discretized plate deflection with derivatives and contact ranges.

    values[i] = u(x_i) in length units; admissibility u >= -H is enforced
    at construction.  du and d2u are the second-order difference arrays of
    `values` and can be recomputed for consistency checks.  `coincidence`
    lists the maximal node-index ranges where the plate touches z = -H.
    """

    grid: Grid1D
    values: np.ndarray
    bc_kind: str
    H: float
    du: np.ndarray = field(repr=False)
    d2u: np.ndarray = field(repr=False)
    coincidence: tuple[tuple[int, int], ...]
    eps_c: float

    def __post_init__(self):
        self.values.setflags(write=False)
        self.du.setflags(write=False)
        self.d2u.setflags(write=False)

    @property
    def has_contact(self) -> bool:
        return len(self.coincidence) > 0

    def contact_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.n + 1, dtype=bool)
        for a, b in self.coincidence:
            mask[a : b + 1] = True
        return mask

    def fingerprint(self) -> str:
        hasher = hashlib.sha256()
        hasher.update(np.ascontiguousarray(self.values, dtype=float).tobytes())
        hasher.update(f"{self.grid.n}:{self.grid.half_width!r}:{self.bc_kind}:"
                      f"{self.H!r}:{self.eps_c!r}".encode())
        return hasher.hexdigest()[:16]


def make_profile(
    samples: np.ndarray,
    params: DeviceParams,
    bc_kind: str = "clamped",
    eps_c: float | None = None,
) -> Profile:
    """Build a Profile from nodal samples on the uniform grid over [-L, L].

    Raises AdmissibilityViolation if any sample is below -H (beyond a
    1e-12 slack) and BoundaryConditionViolation if the end values are
    nonzero for the clamped/pinned kinds.
    """
    samples = np.ascontiguousarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size < 5:
        raise ValueError("profile samples must be a 1-D array with >= 5 nodes")
    if bc_kind not in BC_KINDS:
        raise ValueError(f"unknown bc_kind {bc_kind!r}; expected one of {BC_KINDS}")
    grid = make_grid(params.L, samples.size - 1)

    low = samples.min()
    if low < -params.H - _BC_ATOL:
        raise AdmissibilityViolation(
            f"profile dips to u = {low!r} below the obstacle at -H = {-params.H!r}"
        )
    if bc_kind in ("clamped", "pinned"):
        for end in (0, -1):
            if abs(samples[end]) > _BC_ATOL:
                raise BoundaryConditionViolation(
                    f"{bc_kind} profile must vanish at the ends; "
                    f"u({grid.nodes[end]!r}) = {samples[end]!r}"
                )

    if eps_c is None:
        eps_c = params.contact_threshold
    return Profile(
        grid=grid,
        values=samples,
        bc_kind=bc_kind,
        H=params.H,
        du=d1_array(samples, grid.h_x),
        d2u=d2_array(samples, grid.h_x),
        coincidence=contact_ranges(samples, params.H, eps_c),
        eps_c=float(eps_c),
    )


def coincidence_set(profile: Profile, eps_c: float) -> list[tuple[int, int]]:
    """Recompute the contact index ranges of a profile at threshold eps_c."""
    return list(contact_ranges(profile.values, profile.H, eps_c))


# ---------------------------------------------------------------------------
# Named analytic profiles used by the CLI and the test suite.

def zero_profile(params: DeviceParams, n: int, bc_kind: str = "clamped") -> Profile:
    return make_profile(np.zeros(n + 1), params, bc_kind)


def bump_profile(params: DeviceParams, n: int, amplitude: float,
                 bc_kind: str = "clamped") -> Profile:
    """u(x) = amplitude * H * (1 - (x/L)^2)^2, clamped-compatible."""
    xi = make_grid(params.L, n).nodes / params.L
    u = amplitude * params.H * (1.0 - xi**2) ** 2
    return make_profile(u, params, bc_kind)


def touching_profile(params: DeviceParams, n: int) -> Profile:
    """Clamped profile touching the dielectric exactly at x = 0.

    u(x) = -H + (H/4) (1 - cos(pi x / L))^2; both u and u' vanish at the
    ends, and u(0) = -H with u'(0) = 0 (a cusp-free touch point).
    """
    if n % 2:
        raise ValueError("touching profile needs an even cell count so that "
                         "x = 0 is a grid node")
    x = make_grid(params.L, n).nodes
    u = -params.H + 0.25 * params.H * (1.0 - np.cos(np.pi * x / params.L)) ** 2
    u[0] = 0.0
    u[-1] = 0.0
    return make_profile(u, params, "clamped")


def uniform_profile(params: DeviceParams, n: int, offset: float) -> Profile:
    """Constant deflection u = offset; end conditions are not enforced."""
    return make_profile(np.full(n + 1, float(offset)), params, "free")


# ---------------------------------------------------------------------------
# Reference rectangles for the mapped discretization.

@dataclass(frozen=True)
class ReferenceGrids:
    """Tensor grids on the two reference rectangles.

    The dielectric layer maps onto D x (-d, 0) by a vertical shift and the
    gap region onto D x (0, 1) by vertical rescaling; both share the same
    x-nodes, and their eta = 0 rows describe the same interface nodes.
    """

    xs: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray

    def __post_init__(self):
        for arr in (self.xs, self.eta1, self.eta2):
            arr.setflags(write=False)
        if abs(self.eta1[-1]) > 1e-14 or abs(self.eta2[0]) > 1e-14:
            raise ValueError("interface rows of the two rectangles must sit at eta = 0")

    @property
    def nx(self) -> int:
        return self.xs.size - 1

    @property
    def nz1(self) -> int:
        return self.eta1.size - 1

    @property
    def nz2(self) -> int:
        return self.eta2.size - 1

    @property
    def interface_index(self) -> int:
        """Row index of the interface within the stacked node levels."""
        return self.nz1


def make_reference_grids(params: DeviceParams, nx: int = 256,
                         nz1: int = 64, nz2: int = 128) -> ReferenceGrids:
    # three node levels per column are needed for the one-sided traces
    if nx < 4 or nz1 < 2 or nz2 < 2:
        raise ValueError("reference grids need nx >= 4 and nz1, nz2 >= 2")
    return ReferenceGrids(
        xs=np.linspace(-params.L, params.L, nx + 1),
        eta1=np.linspace(-params.d, 0.0, nz1 + 1),
        eta2=np.linspace(0.0, 1.0, nz2 + 1),
    )


# ---------------------------------------------------------------------------
# Profile CSV I/O.

def write_profile_csv(profile: Profile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(PROFILE_CSV_MAGIC + "\n")
        fh.write("x,u\n")
        for x, u in zip(profile.grid.nodes, profile.values):
            fh.write(f"{x:.17g},{u:.17g}\n")


def read_profile_csv(path, params: DeviceParams, bc_kind: str = "clamped",
                     eps_c: float | None = None) -> Profile:
    """Read a two-column profile file written by write_profile_csv.

    Raises ValueError on a missing magic line or malformed rows, and the
    usual admissibility/end-condition errors from make_profile.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = [ln.strip() for ln in io.StringIO(text) if ln.strip()]
    if not lines or lines[0] != PROFILE_CSV_MAGIC:
        raise ValueError(f"{path}: missing profile header {PROFILE_CSV_MAGIC!r}")
    body = lines[1:]
    if body and body[0].replace(" ", "") == "x,u":
        body = body[1:]
    xs, us = [], []
    for ln in body:
        parts = ln.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}: malformed profile row {ln!r}")
        try:
            xs.append(float(parts[0]))
            us.append(float(parts[1]))
        except ValueError as exc:
            raise ValueError(f"{path}: malformed profile row {ln!r}") from exc
    xs = np.asarray(xs)
    us = np.asarray(us)
    if xs.size < 5:
        raise ValueError(f"{path}: too few profile rows")
    grid = make_grid(params.L, xs.size - 1)
    if not np.allclose(xs, grid.nodes, rtol=0.0, atol=1e-10 * params.L):
        raise ValueError(f"{path}: x column is not the uniform grid over [-L, L]")
    return make_profile(us, params, bc_kind, eps_c)
