"""Boundary-data families for the gap potential and the permittivity field.

A family supplies the applied potential h on the closure of the device as
two smooth functions of (x, z, w): one on the dielectric layer and one on
the gap region, where w is the local plate deflection.  Families carry
analytic first partials because the force-density formulas consume them
pointwise along the plate; finite differences are kept as a cross-check
only.  All callables are pure and broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .geometry import DeviceParams

Array = np.ndarray
_EVAL = Callable[[Array, Array, Array], Array]
_PARTIALS = Callable[[Array, Array, Array], tuple[Array, Array, Array]]


# ---------------------------------------------------------------------------
# x-dependent permittivity profiles (closed form plus derivatives).

@dataclass(frozen=True)
class SigmaProfile:
    """Closed-form sigma1(x) with its first two derivatives."""

    kind: str
    value: Callable[[Array], Array]
    dx: Callable[[Array], Array]
    dxx: Callable[[Array], Array]


def constant_sigma(value: float) -> SigmaProfile:
    if not value > 0.0:
        raise ValueError("permittivity must be positive")
    v = float(value)
    return SigmaProfile(
        kind="constant",
        value=lambda x: np.full_like(np.asarray(x, dtype=float), v),
        dx=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        dxx=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def affine_sigma(a0: float, a1: float) -> SigmaProfile:
    return SigmaProfile(
        kind="affine",
        value=lambda x: a0 + a1 * np.asarray(x, dtype=float),
        dx=lambda x: np.full_like(np.asarray(x, dtype=float), float(a1)),
        dxx=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def sine_sigma(a0: float, a1: float, k: int, L: float) -> SigmaProfile:
    """sigma1(x) = a0 + a1 sin(k pi x / L)."""
    om = k * np.pi / L
    return SigmaProfile(
        kind="sine",
        value=lambda x: a0 + a1 * np.sin(om * np.asarray(x, dtype=float)),
        dx=lambda x: a1 * om * np.cos(om * np.asarray(x, dtype=float)),
        dxx=lambda x: -a1 * om * om * np.sin(om * np.asarray(x, dtype=float)),
    )


def sigma_profile_from_spec(spec: dict, L: float) -> SigmaProfile:
    kind = spec.get("kind")
    try:
        if kind == "constant":
            return constant_sigma(float(spec["value"]))
        if kind == "affine":
            return affine_sigma(float(spec["a0"]), float(spec["a1"]))
        if kind == "sine":
            return sine_sigma(float(spec["a0"]), float(spec["a1"]),
                              int(spec.get("k", 1)), L)
    except KeyError as exc:
        raise ConfigError(f"sigma1 spec missing key {exc.args[0]!r}") from exc
    raise ConfigError(f"unknown sigma1 kind {kind!r}")


@dataclass(frozen=True)
class PermittivityField:
    """Permittivity on the layer (x-dependent) and the gap (constant).

    sigma_min/sigma_max bound sigma over the whole device; sigma_max uses
    the maximum of the sup-norms of sigma1 and its first two x-derivatives
    so the coercivity arithmetic sees the full C^2 size of the field.
    """

    sigma1: Callable[[Array, Array], Array]
    sigma2: float
    sigma_min: float
    sigma_max: float
    sigma1_x: Optional[SigmaProfile] = None

    def sigma1_on(self, x: Array) -> Array:
        """sigma1 sampled along a horizontal line (z-independent fields)."""
        return self.sigma1(np.asarray(x, dtype=float), None)


def build_permittivity(sigma_x: SigmaProfile, params: DeviceParams,
                       n_sample: int = 4097) -> PermittivityField:
    xs = np.linspace(-params.L, params.L, n_sample)
    vals = sigma_x.value(xs)
    if vals.min() <= 0.0:
        raise ValueError("sigma1 must stay positive on the device")
    c2_norm = max(np.abs(vals).max(), np.abs(sigma_x.dx(xs)).max(),
                  np.abs(sigma_x.dxx(xs)).max())

    def sigma1(x, z=None):
        return sigma_x.value(x)

    return PermittivityField(
        sigma1=sigma1,
        sigma2=params.sigma2,
        sigma_min=float(min(params.sigma2, vals.min())),
        sigma_max=float(max(params.sigma2, c2_norm)),
        sigma1_x=sigma_x,
    )


# ---------------------------------------------------------------------------
# Boundary families.

@dataclass(frozen=True)
class BoundaryFamily:
    """Applied-potential family h = (h_lower, h_upper) with first partials.

    eval1/partials1 live on the layer closure (z in [-H-d, -H]) and
    eval2/partials2 on the gap closure (z >= -H); partials return the
    (d/dx, d/dz, d/dw) triple.  `mems` marks families with a grounded
    bottom plate and a constant plate potential V.  m1..m3 bound the
    growth of the partials and feed the coercivity constant; they may be
    absent for families that are not of MEMS type.
    """

    family_id: str
    eval1: _EVAL
    eval2: _EVAL
    partials1: _PARTIALS
    partials2: _PARTIALS
    V: float
    mems: bool
    m1: Optional[float] = None
    m2: Optional[float] = None
    m3: Optional[float] = None

    @property
    def has_growth_constants(self) -> bool:
        return self.m1 is not None and self.m2 is not None and self.m3 is not None


def capacitor_family(params: DeviceParams, sigma_x: SigmaProfile) -> BoundaryFamily:
    """Closed-form two-layer capacitor data for z-independent sigma1.

    With s = sigma1(x) and den(x, w) = sigma2*d + s(x)*(H + w):

        h_lower(x,z,w) = V sigma2 (H + z + d) / den
        h_upper(x,z,w) = V (sigma2 d + s(x)(H + z)) / den

    The bottom plate is grounded, the deformable plate is held at V, and
    value/flux continuity across z = -H holds identically.
    """
    H, d, s2, V = params.H, params.d, params.sigma2, params.V
    s, ds = sigma_x.value, sigma_x.dx

    def den(x, w):
        return s2 * d + s(x) * (H + np.asarray(w, dtype=float))

    def eval1(x, z, w):
        return V * s2 * (H + np.asarray(z, dtype=float) + d) / den(x, w)

    def eval2(x, z, w):
        return V * (s2 * d + s(x) * (H + np.asarray(z, dtype=float))) / den(x, w)

    def partials1(x, z, w):
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        dn = den(x, w)
        hx = -V * s2 * (H + z + d) * ds(x) * (H + w) / dn**2
        hz = V * s2 / dn * np.ones_like(z + w)
        hw = -V * s2 * (H + z + d) * s(x) / dn**2
        return hx, hz, hw

    def partials2(x, z, w):
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        dn = den(x, w)
        hx = V * ds(x) * s2 * d * (z - w) / dn**2
        hz = V * s(x) / dn * np.ones_like(z + w)
        hw = -V * (s2 * d + s(x) * (H + z)) * s(x) / dn**2
        return hx, hz, hw

    m1, m2, m3 = _capacitor_growth_constants(params, sigma_x)
    return BoundaryFamily(
        family_id="capacitor",
        eval1=eval1, eval2=eval2,
        partials1=partials1, partials2=partials2,
        V=V, mems=True, m1=m1, m2=m2, m3=m3,
    )


def _capacitor_growth_constants(params: DeviceParams,
                                sigma_x: SigmaProfile) -> tuple[float, float, float]:
    """Uniform-in-deflection growth bounds for the capacitor family.

    Maximizing the closed-form partials over the physical region (the gap
    evaluated at heights between -H and the plate) gives, with
    t = H + w >= 0, den = s2*d + s*t, and AM-GM den^2 >= 4 s2 d s t:

        |dx h_lower| + |dz h_lower|          <= V (sup|s'|/s / 4 + 1/d)
        sqrt(t) (|dx h_upper| + |dz h_upper|) <= V (c √(s2 d) sup|s'|/s^1.5
                                                    + sqrt(s_max/(s2 d))/2)
        |dw h_lower|                          <= V s_max / (s2 d)
        sqrt(t) |dw h_upper|                  <= V sqrt(s_max/(s2 d)) / 2

    with c = 3*sqrt(3)/16 (the maximum of t^1.5/den^2 sits at t = 3 s2 d/s).
    Every bound is independent of w, so the quadratic growth coefficient
    is zero for this family.
    """
    H, d, s2, V = params.H, params.d, params.sigma2, params.V
    xs = np.linspace(-params.L, params.L, 4097)
    s = sigma_x.value(xs)
    sp = np.abs(sigma_x.dx(xs))
    s_max = float(s.max())

    a1 = V * (float((sp / s).max()) / 4.0 + 1.0 / d)
    c = 3.0 * np.sqrt(3.0) / 16.0
    a2 = V * (c * np.sqrt(s2 * d) * float((sp / s**1.5).max())
              + 0.5 * np.sqrt(s_max / (s2 * d)))
    m1 = max(a1, a2) ** 2
    m2 = 0.0
    m3 = max((V * s_max / (s2 * d)) ** 2, V * V * s_max / (4.0 * s2 * d))
    return float(m1), float(m2), float(m3)


def affine_family(params: DeviceParams, sigma1_const: float,
                  gradient: float = 1.0) -> BoundaryFamily:
    """Deflection-independent test family for constant sigma1.

    h_lower = A (z + H + d), h_upper = A d + (s1 A / s2)(z + H) with
    A = gradient.  Value and flux continuity hold identically and, since
    h does not depend on w, the potential solving the gap problem is h
    itself for every profile.  Not of MEMS type (the plate potential
    varies with the deflection).
    """
    H, d, s2 = params.H, params.d, params.sigma2
    A = float(gradient)
    s1 = float(sigma1_const)

    def eval1(x, z, w):
        return A * (np.asarray(z, dtype=float) + H + d) + _zero(x, w)

    def eval2(x, z, w):
        return A * d + (s1 * A / s2) * (np.asarray(z, dtype=float) + H) + _zero(x, w)

    def partials1(x, z, w):
        shape = np.broadcast(np.asarray(x, dtype=float),
                             np.asarray(z, dtype=float),
                             np.asarray(w, dtype=float)).shape
        return np.zeros(shape), np.full(shape, A), np.zeros(shape)

    def partials2(x, z, w):
        shape = np.broadcast(np.asarray(x, dtype=float),
                             np.asarray(z, dtype=float),
                             np.asarray(w, dtype=float)).shape
        return np.zeros(shape), np.full(shape, s1 * A / s2), np.zeros(shape)

    return BoundaryFamily(
        family_id="affine",
        eval1=eval1, eval2=eval2,
        partials1=partials1, partials2=partials2,
        V=A * (d + s1 * H / s2), mems=False,
    )


def _zero(x, w):
    return 0.0 * (np.asarray(x, dtype=float) + np.asarray(w, dtype=float))


def family_from_config(family_id: str, params: DeviceParams,
                       sigma_x: SigmaProfile, options: dict | None = None) -> BoundaryFamily:
    options = dict(options or {})
    if family_id == "capacitor":
        if options:
            raise ConfigError(f"capacitor family takes no options, got {sorted(options)}")
        return capacitor_family(params, sigma_x)
    if family_id == "affine":
        gradient = float(options.pop("gradient", 1.0))
        if options:
            raise ConfigError(f"unknown affine family options {sorted(options)}")
        xs = np.linspace(-params.L, params.L, 257)
        s = sigma_x.value(xs)
        if np.ptp(s) > 1e-12 * np.abs(s).max():
            raise ConfigError("affine family requires a constant sigma1")
        return affine_family(params, float(s[0]), gradient)
    raise ConfigError(f"unknown family id {family_id!r}")


# ---------------------------------------------------------------------------
# Compatibility and derivative checks.

COMPAT_TOL = 1.0e-10


@dataclass(frozen=True)
class CompatibilityReport:
    """Max residuals of the interface/plate identities, relative to V.

    value_jump / flux_jump cover continuity of h and of sigma dz h across
    z = -H.  The remaining residuals check the grounded-bottom and
    constant-plate structure together with the derivative identities it
    implies; they are None when the family is not checked as MEMS.
    """

    value_jump: float
    flux_jump: float
    mems_checked: bool
    ground_value: Optional[float]
    plate_value: Optional[float]
    ground_w_partial: Optional[float]
    plate_x_partial: Optional[float]
    plate_zw_partial: Optional[float]
    tol: float
    scale: float

    @property
    def residuals(self) -> dict:
        out = {"value_jump": self.value_jump, "flux_jump": self.flux_jump}
        if self.mems_checked:
            out.update(
                ground_value=self.ground_value,
                plate_value=self.plate_value,
                ground_w_partial=self.ground_w_partial,
                plate_x_partial=self.plate_x_partial,
                plate_zw_partial=self.plate_zw_partial,
            )
        return out

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())


def check_compatibility(
    family: BoundaryFamily,
    perm: PermittivityField,
    params: DeviceParams,
    w_samples: Array,
    x_samples: Array,
    tol: float = COMPAT_TOL,
) -> CompatibilityReport:
    w = np.asarray(w_samples, dtype=float)
    x = np.asarray(x_samples, dtype=float)
    if w.size == 0 or x.size == 0:
        raise ValueError("sample sets must be non-empty")
    X, W = np.meshgrid(x, w, indexing="ij")
    scale = family.V if family.V > 0.0 else 1.0
    zi = np.full_like(X, -params.H)

    value_jump = np.abs(family.eval1(X, zi, W) - family.eval2(X, zi, W)).max()
    s1 = perm.sigma1(X, zi)
    flux_jump = np.abs(
        s1 * family.partials1(X, zi, W)[1] - perm.sigma2 * family.partials2(X, zi, W)[1]
    ).max()

    if family.mems:
        zb = np.full_like(X, -params.H - params.d)
        ground_value = np.abs(family.eval1(X, zb, W)).max()
        plate_value = np.abs(family.eval2(X, W, W) - family.V).max()
        ground_w_partial = np.abs(family.partials1(X, zb, W)[2]).max()
        px, pz, pw = family.partials2(X, W, W)
        plate_x_partial = np.abs(px).max()
        plate_zw_partial = np.abs(pz + pw).max()
        mems = dict(
            ground_value=float(ground_value / scale),
            plate_value=float(plate_value / scale),
            ground_w_partial=float(ground_w_partial / scale),
            plate_x_partial=float(plate_x_partial / scale),
            plate_zw_partial=float(plate_zw_partial / scale),
        )
    else:
        mems = dict(ground_value=None, plate_value=None, ground_w_partial=None,
                    plate_x_partial=None, plate_zw_partial=None)

    return CompatibilityReport(
        value_jump=float(value_jump / scale),
        flux_jump=float(flux_jump / scale),
        mems_checked=family.mems,
        tol=tol,
        scale=scale,
        **mems,
    )


def derivative_selfcheck(
    family: BoundaryFamily,
    lower_points: Array | None,
    upper_points: Array | None,
    step: float = 1.0e-6,
) -> float:
    """Max relative mismatch between coded partials and central differences.

    Each point set is an (m, 3) array of (x, z, w) rows in the respective
    region.  The mismatch is scaled by max(|coded|, |fd|, V) per point.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    worst = 0.0
    scale_floor = family.V if family.V > 0.0 else 1.0
    for pts, ev, pr in ((lower_points, family.eval1, family.partials1),
                        (upper_points, family.eval2, family.partials2)):
        if pts is None:
            continue
        pts = np.asarray(pts, dtype=float)
        x, z, w = pts[:, 0], pts[:, 1], pts[:, 2]
        coded = pr(x, z, w)
        fd = (
            (ev(x + step, z, w) - ev(x - step, z, w)) / (2 * step),
            (ev(x, z + step, w) - ev(x, z - step, w)) / (2 * step),
            (ev(x, z, w + step) - ev(x, z, w - step)) / (2 * step),
        )
        for c, f in zip(coded, fd):
            denom = np.maximum(np.maximum(np.abs(c), np.abs(f)), scale_floor)
            worst = max(worst, float((np.abs(c - f) / denom).max()))
    return worst


def default_check_points(params: DeviceParams, n: int = 7) -> tuple[Array, Array]:
    """Interior sample points for derivative_selfcheck, one set per region."""
    x = np.linspace(-0.8 * params.L, 0.8 * params.L, n)
    w = np.linspace(-0.5 * params.H, 1.5 * params.H, n)
    z1 = np.linspace(-params.H - 0.9 * params.d, -params.H - 0.1 * params.d, n)
    lower = np.column_stack([x, z1, w])
    z2 = np.linspace(-0.9 * params.H, 0.0, n) + 0.25 * params.H
    upper = np.column_stack([x, np.minimum(z2, w), w])
    return lower, upper
