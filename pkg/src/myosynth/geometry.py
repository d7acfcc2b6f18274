"""Parametric myotube models.

A myotube is a tube around a smooth centerline on the parameter domain
t in [-1, 1]: a dominant straight axis plus lateral Chebyshev deviations
(one in-plane, one along z), a clamped polynomial+sinusoid thickness
profile, optional straight branches attached on the centerline, and
ellipsoidal features (solid end caps, hollow shaft bulges).

All vectors use (z, y, x) component order to match volume axis order.
All lengths are in world units (voxels at unit spacing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateError, DomainError, PlacementError

_T_EPS = 1e-12


# ---------------------------------------------------------------------------
# Chebyshev series


@dataclass
class ChebyshevSeries:
    """Sum of Chebyshev polynomials T_k with damped unit coefficients.

    coeffs are dimensionless; amp_scale converts the evaluated sum to
    world units. alpha records the damping exponent the coefficients
    were sampled under ((k+1)^-alpha envelope).
    """

    coeffs: list
    alpha: float = 0.0
    amp_scale: float = 1.0

    def __post_init__(self):
        self.coeffs = [float(c) for c in self.coeffs]
        if len(self.coeffs) == 0:
            raise ConfigError("ChebyshevSeries needs at least one coefficient")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.amp_scale <= 0:
            raise ConfigError("amp_scale must be > 0")

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


def _check_t(t: float) -> float:
    t = float(t)
    if abs(t) > 1.0 + _T_EPS:
        raise DomainError(f"parameter t={t} outside [-1, 1]")
    return min(1.0, max(-1.0, t))


def chebyshev_eval(series: ChebyshevSeries, t: float) -> float:
    """amp_scale * sum_k c_k T_k(t), by the three-term recurrence."""
    t = _check_t(t)
    c = series.coeffs
    acc = c[0]
    if len(c) > 1:
        tk_prev, tk = 1.0, t
        acc += c[1] * tk
        for k in range(2, len(c)):
            tk_prev, tk = tk, 2.0 * t * tk - tk_prev
            acc += c[k] * tk
    return series.amp_scale * acc


def chebyshev_deriv(series: ChebyshevSeries, t: float) -> float:
    """Analytic derivative: T_k'(t) = k * U_{k-1}(t)."""
    t = _check_t(t)
    c = series.coeffs
    if len(c) == 1:
        return 0.0
    # U_0 = 1, U_1 = 2t, U_{m+1} = 2t U_m - U_{m-1}
    acc = c[1] * 1.0
    u_prev, u = 1.0, 2.0 * t
    for k in range(2, len(c)):
        acc += c[k] * k * u
        u_prev, u = u, 2.0 * t * u - u_prev
    return series.amp_scale * acc


def sample_damped_coeffs(K: int, alpha: float, amp_scale: float,
                         stream: np.random.Generator) -> ChebyshevSeries:
    """Draw c_k = u_k * (k+1)^-alpha with u_k ~ U(-1, 1).

    The (k+1) base keeps the k=0 term finite; the envelope
    |c_k| <= (k+1)^-alpha holds as a hard bound.
    """
    if K < 0:
        raise ConfigError("degree K must be >= 0")
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    raw = stream.uniform(-1.0, 1.0, size=K + 1)
    k = np.arange(K + 1, dtype=np.float64)
    coeffs = raw * (k + 1.0) ** (-alpha)
    return ChebyshevSeries(coeffs=list(coeffs), alpha=alpha, amp_scale=amp_scale)


# ---------------------------------------------------------------------------
# Thickness


@dataclass
class ThicknessProfile:
    """Radius along the tube: clamped polynomial baseline plus sinusoid."""

    poly: ChebyshevSeries
    gamma: float = 0.0       # sinusoid amplitude, world units
    delta: float = 0.0       # frequency, cycles over the full tube
    phase: float = 0.0
    r_min: float = 0.5
    r_max: float = 1e9

    def __post_init__(self):
        if self.gamma < 0 or self.delta < 0:
            raise ConfigError("gamma and delta must be >= 0")
        if not (0 < self.r_min <= self.r_max):
            raise ConfigError(f"need 0 < r_min <= r_max, got {self.r_min}, {self.r_max}")


def radius_at(profile: ThicknessProfile, t: float) -> float:
    t = _check_t(t)
    base = chebyshev_eval(profile.poly, t)
    wobble = profile.gamma * math.sin(
        2.0 * math.pi * profile.delta * (t + 1.0) / 2.0 + profile.phase)
    return min(profile.r_max, max(profile.r_min, base + wobble))


# ---------------------------------------------------------------------------
# Branches and ellipsoids


@dataclass
class Branch:
    """Straight segment attached on the parent centerline.

    Radius starts at the parent radius at t_attach (continuity across the
    junction) and tapers linearly to taper_end of that value at the tip.
    """

    t_attach: float
    direction: tuple           # unit (z, y, x)
    length: float
    taper_end: float = 0.5

    def __post_init__(self):
        if not (-1.0 < self.t_attach < 1.0):
            raise ConfigError("t_attach must lie strictly inside (-1, 1)")
        d = np.asarray(self.direction, dtype=np.float64)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-9:
            raise ConfigError(f"branch direction not unit length (norm={n})")
        if self.length <= 0:
            raise ConfigError("branch length must be > 0")
        if not (0 < self.taper_end <= 1):
            raise ConfigError("taper_end must be in (0, 1]")
        self.direction = tuple(float(v) for v in d)


KIND_SOLID_CAP = "solid_cap"
KIND_HOLLOW_SHAFT = "hollow_shaft"


@dataclass
class EllipsoidFeature:
    """Ellipsoid placed on the centerline, first axis along the tangent."""

    t_center: float
    semi_axes: tuple           # (a, b, c), a along tangent
    kind: str
    shell_fraction: float = 0.6

    def __post_init__(self):
        if self.kind not in (KIND_SOLID_CAP, KIND_HOLLOW_SHAFT):
            raise ConfigError(f"unknown ellipsoid kind {self.kind!r}")
        a, b, c = (float(v) for v in self.semi_axes)
        if min(a, b, c) <= 0:
            raise ConfigError("semi-axes must be > 0")
        self.semi_axes = (a, b, c)
        if self.kind == KIND_SOLID_CAP:
            if abs(self.t_center) != 1.0:
                raise ConfigError("solid caps only at t = -1 or +1")
        else:
            if abs(self.t_center) >= 1.0:
                raise ConfigError("shaft ellipsoids need |t_center| < 1")
            if not (0 < self.shell_fraction < 1):
                raise ConfigError("shell_fraction must be in (0, 1)")


# ---------------------------------------------------------------------------
# The model


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateError("zero vector cannot be normalized")
    return v / n


@dataclass
class MyotubeModel:
    anchor: tuple              # (z, y, x) world position of t = 0
    axis: tuple                # unit (z, y, x), dominant in XY
    half_length: float
    lateral_xy: ChebyshevSeries
    lateral_z: ChebyshevSeries
    thickness: ThicknessProfile
    branches: list = field(default_factory=list)
    ellipsoids: list = field(default_factory=list)
    instance_id: int = 1

    def __post_init__(self):
        self.anchor = tuple(float(v) for v in self.anchor)
        self.axis = tuple(float(v) for v in _unit(self.axis))
        if self.half_length <= 0:
            raise ConfigError("half_length must be > 0")
        if self.instance_id < 1:
            raise ConfigError("instance_id must be >= 1 (0 is background)")
        if math.hypot(self.axis[1], self.axis[2]) < 1e-9:
            raise ConfigError("axis must have a nonzero XY projection")

    def frame(self):
        """(axis, n1, n2): axis, in-plane normal, re-orthogonalized z."""
        a = np.asarray(self.axis)
        n1 = _unit(np.array([0.0, a[2], -a[1]]))          # in XY plane, perp to axis
        ez = np.array([1.0, 0.0, 0.0])
        n2 = _unit(ez - np.dot(ez, a) * a)
        return a, n1, n2


def centerline_point(model: MyotubeModel, t: float) -> np.ndarray:
    """p(t) = anchor + half_length*t*axis + d_xy(t)*n1 + d_z(t)*n2."""
    t = _check_t(t)
    a, n1, n2 = model.frame()
    d_xy = chebyshev_eval(model.lateral_xy, t)
    d_z = chebyshev_eval(model.lateral_z, t)
    return (np.asarray(model.anchor)
            + model.half_length * t * a
            + d_xy * n1 + d_z * n2)


def centerline_velocity(model: MyotubeModel, t: float) -> np.ndarray:
    """Unnormalized derivative p'(t) of the centerline."""
    t = _check_t(t)
    a, n1, n2 = model.frame()
    return (model.half_length * a
            + chebyshev_deriv(model.lateral_xy, t) * n1
            + chebyshev_deriv(model.lateral_z, t) * n2)


def tangent_at(model: MyotubeModel, t: float) -> np.ndarray:
    v = centerline_velocity(model, t)
    n = float(np.linalg.norm(v))
    if n < 1e-9:
        raise DegenerateError(f"degenerate tangent at t={t}")
    return v / n


def _perp_basis(direction):
    """Two unit vectors orthogonal to `direction` and to each other."""
    d = np.asarray(direction, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, d)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = _unit(np.cross(d, helper))
    v = _unit(np.cross(d, u))
    return u, v


def orientation_frame(direction) -> np.ndarray:
    """3x3 row-orthonormal frame with row 0 along `direction`."""
    d = _unit(direction)
    u, v = _perp_basis(d)
    return np.stack([d, u, v])


def add_branch(model: MyotubeModel, stream: np.random.Generator,
               theta_min: float, theta_max: float,
               length_range, taper_range) -> Branch:
    """Sample a branch preserving junction continuity; appends and returns it.

    The branch starts exactly on the parent centerline, leaves within a cone
    of half-angle theta about the tangent, and inherits the parent radius at
    the junction.
    """
    if theta_max >= math.pi / 2:
        raise ConfigError("theta_max must be < pi/2")
    if theta_min > theta_max:
        raise ConfigError("theta_min must be <= theta_max")
    t_attach = float(stream.uniform(-0.8, 0.8))
    tan = tangent_at(model, t_attach)
    theta = float(stream.uniform(theta_min, theta_max))
    u, v = _perp_basis(tan)
    phi = float(stream.uniform(0.0, 2.0 * math.pi))
    u_perp = math.cos(phi) * u + math.sin(phi) * v
    direction = _unit(tan + math.tan(theta) * u_perp)
    branch = Branch(
        t_attach=t_attach,
        direction=tuple(direction),
        length=float(stream.uniform(*length_range)),
        taper_end=float(stream.uniform(*taper_range)),
    )
    model.branches.append(branch)
    return branch


def branch_radii(model: MyotubeModel, branch: Branch):
    """(radius at junction, radius at tip) of a branch."""
    r0 = radius_at(model.thickness, branch.t_attach)
    return r0, r0 * branch.taper_end


def place_ellipsoids(model: MyotubeModel, stream: np.random.Generator,
                     n_shaft_range, gap_min: float,
                     cap_a_range, cap_b_max: float,
                     bulge_max: float, shaft_a_range,
                     shell_fraction_range,
                     max_retries: int = 200) -> dict:
    """Place two solid end caps plus spaced hollow shaft bulges.

    Returns metadata: {"requested": n, "placed": m} for the shaft features.
    Falls back to fewer shaft features if the parametric gap gap_min cannot
    be satisfied within max_retries draws.
    """
    for t_end in (-1.0, 1.0):
        r_end = radius_at(model.thickness, t_end)
        a = float(stream.uniform(*cap_a_range)) * r_end
        b = float(stream.uniform(1.0, cap_b_max)) * r_end
        model.ellipsoids.append(EllipsoidFeature(
            t_center=t_end, semi_axes=(a, b, b), kind=KIND_SOLID_CAP))

    lo, hi = int(n_shaft_range[0]), int(n_shaft_range[1])
    n_req = int(stream.integers(lo, hi + 1))
    centers: list = []
    tries = 0
    while len(centers) < n_req and tries < max_retries:
        tries += 1
        t_c = float(stream.uniform(-0.8, 0.8))
        if all(abs(t_c - t) >= gap_min for t in centers):
            centers.append(t_c)
    if n_req > 0 and not centers and gap_min > 1.6:
        raise PlacementError(f"gap_min={gap_min} leaves no room on [-0.8, 0.8]")
    for t_c in centers:
        r_local = radius_at(model.thickness, t_c)
        b = float(stream.uniform(1.0 + 1e-6, bulge_max)) * r_local
        a = float(stream.uniform(*shaft_a_range)) * b
        model.ellipsoids.append(EllipsoidFeature(
            t_center=t_c, semi_axes=(a, b, b), kind=KIND_HOLLOW_SHAFT,
            shell_fraction=float(stream.uniform(*shell_fraction_range))))
    return {"requested": n_req, "placed": len(centers)}


def ellipsoid_world(model: MyotubeModel, feat: EllipsoidFeature):
    """(center, semi_axes, frame) of a feature in world coordinates."""
    center = centerline_point(model, feat.t_center)
    frame = orientation_frame(tangent_at(model, feat.t_center))
    return center, np.asarray(feat.semi_axes), frame
