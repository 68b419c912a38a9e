"""Bistatic channel geometry: landmark models, measurement function and Jacobians.

The transmitter (a base station, BS) and the mobile receiver (UE) are not
synchronized, so delays are expressed in meters of path length and carry an
additive clock bias.  Three landmark kinds produce paths:

* ``BS``   -- the direct line-of-sight path to the transmitter itself,
* ``VA``   -- a virtual anchor, the mirror image of the BS across a flat
  reflecting surface; the surface is fully determined by the (BS, VA) pair,
* ``SP``   -- a point scatterer, producing a two-leg BS -> SP -> UE path.

A measurement is the 5-vector [toa, aoa_az, aoa_el, aod_az, aod_el]:
path length plus bias (m), angle of arrival at the UE (azimuth measured in
the UE frame, i.e. global azimuth minus heading; elevation in the global
frame, the UE array is assumed level) and angle of departure at the BS
(global frame).  Azimuth conventions are atan2(dy, dx); elevation is
atan2(dz, hypot(dx, dy)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

TWO_PI = 2.0 * math.pi


class DegenerateGeometryError(ValueError):
    """A direction vector needed for angles has (near-)zero length."""


class LandmarkType(Enum):
    BS = "BS"
    VA = "VA"
    SP = "SP"


#: Canonical ordering used everywhere a per-type structure is iterated.
TYPE_ORDER = (LandmarkType.BS, LandmarkType.VA, LandmarkType.SP)


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TWO_PI)
    if np.ndim(a) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class UEState:
    """Receiver state: 3-D position (m), heading (rad), clock bias (m)."""

    position: np.ndarray
    heading: float
    clock_bias: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        object.__setattr__(self, "clock_bias", float(self.clock_bias))
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise ValueError("UE position must be a finite 3-vector")

    def as_vector(self) -> np.ndarray:
        """State as the 5-vector [x, y, z, heading, bias]."""
        return np.concatenate([self.position, [self.heading, self.clock_bias]])

    @classmethod
    def from_vector(cls, v) -> "UEState":
        v = np.asarray(v, dtype=float)
        return cls(position=v[:3], heading=v[3], clock_bias=v[4])


@dataclass(frozen=True)
class Landmark:
    """A static landmark: kind plus 3-D position."""

    kind: LandmarkType
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise ValueError("landmark position must be a finite 3-vector")


@dataclass(frozen=True)
class Plane:
    """A flat surface given by a point on it and its unit normal."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))


@dataclass(frozen=True)
class Measurement:
    """A channel-parameter measurement vector with its covariance.

    For the bistatic channel the vector is [toa, aoa_az, aoa_el, aod_az,
    aod_el]; the container itself is dimension-agnostic so the filter core
    can be exercised with toy models.
    """

    z: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "covariance", cov)
        if z.ndim != 1 or cov.shape != (z.size, z.size):
            raise ValueError("measurement/covariance shapes inconsistent")
        if np.max(np.abs(cov - cov.T)) > 1e-9:
            raise ValueError("measurement covariance must be symmetric within 1e-9")
        if np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) <= 0.0:
            raise ValueError("measurement covariance must be positive definite")

    @classmethod
    def from_channel_params(cls, toa, aoa_az, aoa_el, aod_az, aod_el, covariance):
        """Build a 5-D channel measurement, validating angle ranges."""
        for el in (aoa_el, aod_el):
            if not -np.pi / 2 <= el <= np.pi / 2:
                raise ValueError("elevation out of [-pi/2, pi/2]")
        z = np.array([toa, wrap_angle(aoa_az), aoa_el, wrap_angle(aod_az), aod_el])
        return cls(z=z, covariance=covariance)

    @property
    def toa(self) -> float:
        return float(self.z[0])

    @property
    def aoa(self) -> np.ndarray:
        return self.z[1:3]

    @property
    def aod(self) -> np.ndarray:
        return self.z[3:5]


def mirror_bs(bs_position, surface_point, surface_normal) -> np.ndarray:
    """Mirror the BS across a flat surface, yielding the virtual anchor.

    Computes (I - 2 nu nu^T) x + 2 (mu^T nu) nu for surface point mu and unit
    normal nu.  Raises ValueError if the normal is not unit length.
    """
    x = np.asarray(bs_position, dtype=float)
    mu = np.asarray(surface_point, dtype=float)
    nu = np.asarray(surface_normal, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-9:
        raise ValueError("surface normal must have unit norm")
    return x - 2.0 * nu * (nu @ x) + 2.0 * (mu @ nu) * nu


def _direction(v, what: str) -> tuple[np.ndarray, float]:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateGeometryError(f"zero-length {what} direction")
    return v, n


def _azimuth_elevation(g) -> tuple[float, float]:
    rho = math.hypot(g[0], g[1])
    if rho < 1e-12:
        raise DegenerateGeometryError("vertical direction: azimuth undefined")
    return math.atan2(g[1], g[0]), math.atan2(g[2], rho)


def _angle_gradients(g) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of azimuth and elevation of a direction vector w.r.t. it."""
    gx, gy, gz = g
    rho2 = gx * gx + gy * gy
    r2 = rho2 + gz * gz
    if rho2 < 1e-24:
        raise DegenerateGeometryError("vertical direction: azimuth undefined")
    rho = math.sqrt(rho2)
    d_az = np.array([-gy / rho2, gx / rho2, 0.0])
    d_el = np.array([-gx * gz / (rho * r2), -gy * gz / (rho * r2), rho / r2])
    return d_az, d_el


def _path_geometry(ue: UEState, lm: Landmark, bs_position):
    """Return (path_length, aoa_direction, aod_direction) for the landmark kind.

    Directions are unnormalized global-frame vectors: the AOA direction
    points from the UE toward the apparent source, the AOD direction from
    the BS toward the departure target.
    """
    u = ue.position
    x = lm.position
    if lm.kind is LandmarkType.BS:
        d, rng = _direction(x - u, "UE-BS")
        return rng, d, u - x
    if lm.kind is LandmarkType.VA:
        d, rng = _direction(x - u, "UE-VA")
        bs = np.asarray(bs_position, dtype=float)
        nu_raw, span = _direction(x - bs, "BS-VA")
        nu = nu_raw / span
        # Mirroring VA->UE across the surface gives the BS->incidence ray.
        aod = (u - x) - 2.0 * nu * (nu @ (u - x))
        return rng, d, aod
    if lm.kind is LandmarkType.SP:
        bs = np.asarray(bs_position, dtype=float)
        d2, leg2 = _direction(x - u, "UE-SP")
        _, leg1 = _direction(x - bs, "BS-SP")
        return leg1 + leg2, d2, x - bs
    raise ValueError(f"unknown landmark kind {lm.kind!r}")


def measure(ue: UEState, lm: Landmark, bs_position) -> np.ndarray:
    """Noise-free channel parameters [toa, aoa_az, aoa_el, aod_az, aod_el].

    The TOA is the path length in meters plus the UE clock bias.  AOA
    azimuth is relative to the UE heading; all angles wrapped to (-pi, pi].
    """
    path, g_aoa, g_aod = _path_geometry(ue, lm, bs_position)
    aoa_az, aoa_el = _azimuth_elevation(g_aoa)
    aod_az, aod_el = _azimuth_elevation(g_aod)
    return np.array([
        path + ue.clock_bias,
        wrap_angle(aoa_az - ue.heading),
        aoa_el,
        aod_az,
        aod_el,
    ])


def measure_jacobian(ue: UEState, lm: Landmark, bs_position) -> np.ndarray:
    """Analytic 5x8 Jacobian of :func:`measure`.

    Columns stack the joint state [ue position (3), heading, clock bias,
    landmark position (3)].
    """
    u = ue.position
    x = lm.position
    H = np.zeros((5, 8))
    H[0, 4] = 1.0  # bias enters the delay additively

    # AOA rows: the apparent source is the landmark itself for every kind.
    g_aoa, _ = _direction(x - u, "UE-landmark")
    d_az, d_el = _angle_gradients(g_aoa)
    H[1, 0:3] = -d_az
    H[1, 5:8] = d_az
    H[1, 3] = -1.0
    H[2, 0:3] = -d_el
    H[2, 5:8] = d_el

    if lm.kind is LandmarkType.BS:
        e = g_aoa / np.linalg.norm(g_aoa)
        H[0, 0:3] = -e
        H[0, 5:8] = e
        d_az2, d_el2 = _angle_gradients(u - x)
        H[3, 0:3] = d_az2
        H[3, 5:8] = -d_az2
        H[4, 0:3] = d_el2
        H[4, 5:8] = -d_el2
    elif lm.kind is LandmarkType.VA:
        e = g_aoa / np.linalg.norm(g_aoa)
        H[0, 0:3] = -e
        H[0, 5:8] = e
        bs = np.asarray(bs_position, dtype=float)
        span_vec, span = _direction(x - bs, "BS-VA")
        nu = span_vec / span
        R = np.eye(3) - 2.0 * np.outer(nu, nu)
        N = (np.eye(3) - np.outer(nu, nu)) / span  # d nu / d x
        d = u - x
        g_aod = R @ d
        # g = R(nu(x)) d(x, u):  dg/du = R,  dg/dx per product rule.
        dg_dx = -R - 2.0 * (nu @ d) * N - 2.0 * np.outer(nu, N @ d)
        d_az2, d_el2 = _angle_gradients(g_aod)
        H[3, 0:3] = d_az2 @ R
        H[3, 5:8] = d_az2 @ dg_dx
        H[4, 0:3] = d_el2 @ R
        H[4, 5:8] = d_el2 @ dg_dx
    elif lm.kind is LandmarkType.SP:
        bs = np.asarray(bs_position, dtype=float)
        leg1_vec, leg1 = _direction(x - bs, "BS-SP")
        e1 = leg1_vec / leg1
        e2 = g_aoa / np.linalg.norm(g_aoa)
        H[0, 0:3] = -e2
        H[0, 5:8] = e1 + e2
        d_az2, d_el2 = _angle_gradients(x - bs)
        H[3, 5:8] = d_az2
        H[4, 5:8] = d_el2
    else:
        raise ValueError(f"unknown landmark kind {lm.kind!r}")
    return H


def detection_probability(ue: UEState, lm: Landmark, p_detect=0.9,
                          fov_radius: float = 50.0) -> float:
    """Probability that the landmark produces a measurement.

    BS and VA paths are always visible; an SP is visible only within
    ``fov_radius`` meters of the UE.  ``p_detect`` may be a scalar or a
    mapping from :class:`LandmarkType`.
    """
    if isinstance(p_detect, dict):
        pd = float(p_detect.get(lm.kind, 0.0))
    else:
        pd = float(p_detect)
    if lm.kind is LandmarkType.SP:
        if np.linalg.norm(lm.position - ue.position) > fov_radius:
            return 0.0
    return pd


# Clamp keeping misdetection weights strictly positive even for p_detect = 1.
MAX_P_DETECT = 1.0 - 1e-9


@dataclass(frozen=True)
class ChannelModel:
    """Measurement-model facade the filter core works against.

    Wraps the channel geometry with the known BS anchor position and the
    detection model.  Any object with the same methods (``predict``,
    ``jacobians``, ``detection_probability``, ``invert``, ``wrap_residual``,
    ``dim``) can be substituted, e.g. linear toys in tests.
    """

    bs_position: np.ndarray
    p_detect: dict = field(default_factory=lambda: {
        LandmarkType.BS: 0.9, LandmarkType.VA: 0.9, LandmarkType.SP: 0.9})
    fov_radius: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "bs_position",
                           np.asarray(self.bs_position, dtype=float))
        clamped = {k: min(float(v), MAX_P_DETECT) for k, v in self.p_detect.items()}
        object.__setattr__(self, "p_detect", clamped)

    @property
    def dim(self) -> int:
        return 5

    #: Indices of angular measurement components (residuals wrapped).
    angle_components = (1, 2, 3, 4)

    def wrap_residual(self, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float)
        v[..., list(self.angle_components)] = wrap_angle(
            v[..., list(self.angle_components)])
        return v

    def _ue(self, sensor_mean) -> UEState:
        return UEState.from_vector(sensor_mean)

    def predict(self, sensor_mean, lm_position, kind: LandmarkType) -> np.ndarray:
        return measure(self._ue(sensor_mean), Landmark(kind, lm_position),
                       self.bs_position)

    def jacobians(self, sensor_mean, lm_position, kind: LandmarkType):
        """(H_sensor, H_landmark) blocks of the measurement Jacobian."""
        H = measure_jacobian(self._ue(sensor_mean), Landmark(kind, lm_position),
                             self.bs_position)
        return H[:, :5], H[:, 5:]

    def detection_probability(self, sensor_mean, lm_position,
                              kind: LandmarkType) -> float:
        return detection_probability(
            self._ue(sensor_mean), Landmark(kind, lm_position),
            self.p_detect, self.fov_radius)

    def invert(self, z, sensor_mean, kind: LandmarkType):
        """Invert a measurement to a landmark position at the sensor mean.

        Returns None when the geometry does not admit a solution (the caller
        treats the measurement as clutter-only).
        """
        z = np.asarray(z, dtype=float)
        ue = self._ue(sensor_mean)
        path = z[0] - ue.clock_bias
        if path <= 0.0:
            return None
        if kind in (LandmarkType.BS, LandmarkType.VA):
            az = z[1] + ue.heading
            el = z[2]
            d = np.array([math.cos(el) * math.cos(az),
                          math.cos(el) * math.sin(az),
                          math.sin(el)])
            return ue.position + path * d
        if kind is LandmarkType.SP:
            az, el = z[3], z[4]
            g = np.array([math.cos(el) * math.cos(az),
                          math.cos(el) * math.sin(az),
                          math.sin(el)])
            w = self.bs_position - ue.position
            denom = 2.0 * (path + g @ w)
            if denom <= 1e-9:
                return None
            s = (path * path - float(w @ w)) / denom
            if s <= 0.0 or s >= path:
                return None
            return self.bs_position + s * g
        raise ValueError(f"unknown landmark kind {kind!r}")
