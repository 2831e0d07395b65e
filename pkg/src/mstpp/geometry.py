"""
Metrics, neighborhoods, window erosion, and set volumes on the
space-time(-mark) domain.

Conventions used throughout the package:

- space-time distance is the sup metric: the maximum of the Euclidean
  spatial distance and the absolute time difference,
- every neighborhood (cylinder, ball, cone) is closed,
- observation windows are axis-aligned boxes; eroding a box by (r, t)
  shrinks each spatial axis by r on both ends and the temporal interval
  by t on both ends, which for boxes coincides with the Euclidean
  erosion {x : d(x, boundary) >= r}.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpaceTimePoint",
    "Window",
    "Cylinder",
    "Cone2D",
    "ErosionError",
    "sup_metric",
    "full_metric",
    "cylinder_contains",
    "cylinder_volume",
    "cone_volume",
    "unit_ball_volume",
    "erode_window",
]


class ErosionError(ValueError):
    """Raised when eroding a window by (r, t) would empty it."""


@dataclass(frozen=True)
class SpaceTimePoint:
    """A ground point: spatial coordinates plus a time coordinate.

    Parameters
    ----------
    x : tuple of float
        Spatial coordinates in R^d, d >= 1.
    t : float
        Time coordinate.
    """

    x: tuple
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "t", float(self.t))
        if len(self.x) < 1:
            raise ValueError("spatial dimension must be >= 1")
        if not all(math.isfinite(v) for v in self.x) or not math.isfinite(self.t):
            raise ValueError("coordinates must be finite")

    @property
    def dim(self):
        return len(self.x)


@dataclass(frozen=True)
class Window:
    """Axis-aligned observation window: a spatial box times a time interval.

    Parameters
    ----------
    spatial : tuple of (lo, hi) pairs
        Per-axis spatial bounds; lo < hi on every axis.
    temporal : (lo, hi) pair
        Temporal bounds; lo < hi.
    """

    spatial: tuple
    temporal: tuple

    def __post_init__(self):
        spatial = tuple((float(lo), float(hi)) for lo, hi in self.spatial)
        temporal = (float(self.temporal[0]), float(self.temporal[1]))
        object.__setattr__(self, "spatial", spatial)
        object.__setattr__(self, "temporal", temporal)
        for lo, hi in spatial + (temporal,):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError("window bounds must be finite")
            if not lo < hi:
                raise ValueError(f"window bounds must satisfy lo < hi, got ({lo}, {hi})")

    @property
    def dim(self):
        return len(self.spatial)

    @property
    def spatial_volume(self):
        vol = 1.0
        for lo, hi in self.spatial:
            vol *= hi - lo
        return vol

    @property
    def temporal_length(self):
        return self.temporal[1] - self.temporal[0]

    @property
    def volume(self):
        return self.spatial_volume * self.temporal_length

    def spatial_bounds(self):
        """Spatial bounds as (lo, hi) float arrays of shape (d,)."""
        arr = np.asarray(self.spatial, dtype=float)
        return arr[:, 0].copy(), arr[:, 1].copy()

    def contains(self, x, t):
        """Closed-window membership for arrays x (N, d) and t (N,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.spatial_bounds()
        ok = np.all((x >= lo) & (x <= hi), axis=1)
        ok &= (t >= self.temporal[0]) & (t <= self.temporal[1])
        return ok

    def erode(self, r, t):
        return erode_window(self, r, t)


def unit_ball_volume(d):
    """Lebesgue volume of the unit Euclidean ball in R^d."""
    d = int(d)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


@dataclass(frozen=True)
class Cylinder:
    """Closed cylinder: spatial ball of radius r times a time interval
    of half-height t, centered at a space-time point."""

    center: SpaceTimePoint
    r: float
    t: float

    def __post_init__(self):
        if self.r < 0 or self.t < 0:
            raise ValueError("cylinder requires r >= 0 and t >= 0")

    def contains(self, p):
        return cylinder_contains(self, p)

    @property
    def volume(self):
        return cylinder_volume(self.r, self.t, self.center.dim)


@dataclass(frozen=True)
class Cone2D:
    """Closed double cone in R^2 x R: points x + a*(cos v, sin v) with
    a in [0, r] and direction v in [phi, psi] or [phi+pi, psi+pi],
    times the interval [t_c - t, t_c + t].

    Requires -pi/2 <= phi < psi <= phi + pi.
    """

    center: SpaceTimePoint
    phi: float
    psi: float
    r: float
    t: float

    def __post_init__(self):
        if self.center.dim != 2:
            raise ValueError("directional cones are defined for d = 2 only")
        if not (-math.pi / 2 <= self.phi < math.pi / 2):
            raise ValueError("phi must lie in [-pi/2, pi/2)")
        if not (self.phi < self.psi <= self.phi + math.pi):
            raise ValueError("psi must lie in (phi, phi + pi]")
        if self.r < 0 or self.t < 0:
            raise ValueError("cone requires r >= 0 and t >= 0")

    def contains(self, p):
        if p.dim != 2:
            raise ValueError("dimension mismatch")
        dx = p.x[0] - self.center.x[0]
        dy = p.x[1] - self.center.x[1]
        dt = abs(p.t - self.center.t)
        if dt > self.t or math.hypot(dx, dy) > self.r:
            return False
        return bool(direction_in_cone(np.array([dx]), np.array([dy]), self.phi, self.psi)[0])

    @property
    def volume(self):
        return cone_volume(self.phi, self.psi, self.r, self.t)


def direction_in_cone(dx, dy, phi, psi):
    """Vectorized membership of displacement directions in the closed double
    wedge [phi, psi] union [phi+pi, psi+pi]. Zero displacements belong to
    every cone (the apex is always included)."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    theta = np.arctan2(dy, dx)
    # fold opposite directions together; psi - phi == pi covers everything
    rel = np.mod(theta - phi, math.pi)
    span = psi - phi
    if span >= math.pi:
        inside = np.ones(theta.shape, dtype=bool)
    else:
        # values just below pi are wrapped zeros (floating-point mod artifact)
        inside = (rel <= span) | (rel >= math.pi - 1e-12)
    inside = inside | ((dx == 0.0) & (dy == 0.0))
    return inside


def sup_metric(a, b):
    """Sup metric between two space-time points: the maximum of the
    Euclidean spatial distance and the absolute time difference.

    Parameters
    ----------
    a, b : SpaceTimePoint

    Returns
    -------
    float
    """
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    ds = math.dist(a.x, b.x)
    return max(ds, abs(a.t - b.t))


def full_metric(a, b, mark_space):
    """Distance between two marked points.

    For continuous mark spaces the combination rule is the maximum of the
    space-time sup metric and the absolute mark difference; for finite
    label spaces the combination is additive (sup metric plus absolute
    label difference).

    Parameters
    ----------
    a, b : (SpaceTimePoint, mark) pairs
    mark_space : object
        Must expose ``is_labelled`` and ``contains_mark``.

    Returns
    -------
    float
    """
    (pa, ma), (pb, mb) = a, b
    if not mark_space.contains_mark(ma) or not mark_space.contains_mark(mb):
        raise ValueError("mark outside mark space")
    ground = sup_metric(pa, pb)
    dmark = abs(float(ma) - float(mb))
    if mark_space.is_labelled:
        return ground + dmark
    return max(ground, dmark)


def cylinder_contains(c, p):
    """Closed-cylinder membership: spatial distance <= r and time
    difference <= t, both boundaries inclusive."""
    if c.center.dim != p.dim:
        raise ValueError("dimension mismatch")
    ds = math.dist(c.center.x, p.x)
    return ds <= c.r and abs(c.center.t - p.t) <= c.t


def cylinder_volume(r, t, d):
    """Lebesgue volume 2 t r^d omega_d of a cylinder with spatial radius r,
    temporal half-height t, in spatial dimension d."""
    if r < 0 or t < 0:
        raise ValueError("cylinder volume requires r >= 0 and t >= 0")
    return 2.0 * t * r ** int(d) * unit_ball_volume(d)


def cone_volume(phi, psi, r, t):
    """Lebesgue volume of the closed double cone: the double wedge spans an
    angle (psi - phi) on each side, giving spatial area (psi - phi) r^2,
    times the temporal extent 2t."""
    if not phi < psi <= phi + math.pi:
        raise ValueError("psi must lie in (phi, phi + pi]")
    if r < 0 or t < 0:
        raise ValueError("cone volume requires r >= 0 and t >= 0")
    return (psi - phi) * r * r * 2.0 * t


def erode_window(w, r, t):
    """Shrink a window by r on both ends of every spatial axis and by t on
    both ends of the temporal interval.

    Raises
    ------
    ErosionError
        If the eroded window would be empty or degenerate; this error drives
        the maximum admissible (r, t) lag grid.
    """
    if r < 0 or t < 0:
        raise ValueError("erosion requires r >= 0 and t >= 0")
    spatial = tuple((lo + r, hi - r) for lo, hi in w.spatial)
    temporal = (w.temporal[0] + t, w.temporal[1] - t)
    for lo, hi in spatial + (temporal,):
        if not lo < hi:
            raise ErosionError(
                f"erosion exceeds window: (r={r}, t={t}) empties an axis"
            )
    return Window(spatial=spatial, temporal=temporal)
