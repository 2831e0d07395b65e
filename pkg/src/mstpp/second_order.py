"""
Second-order summary statistics for marked spatio-temporal patterns.

The central object is the minus-sampling estimator of the marked
second-order reduced moment measure: a normalized sum over ordered
distinct pairs whose first point lies in the eroded window with mark in C
and whose second point falls in a structuring set around the first with
mark in D, each pair weighted by the reciprocal product of intensities.
Evaluated on cylinder sets over a lag grid this yields the marked
inhomogeneous spatio-temporal K-function; cones give the directional
variant, and plug-in choices of the normalizing measures give the four
denominator scenarios and the stationary specialization.

Implementation notes
--------------------
A pair at spatial lag ds and temporal lag du contributes to exactly the
contiguous block of grid cells {(r, t): ds <= r <= first-point spatial
margin, du <= t <= first-point temporal margin}. Each pair is therefore
accumulated at the four corners of its index rectangle in a difference
array, and a double cumulative sum recovers every cell total in one pass;
per-cell denominator sums over the eroded windows use the same device with
degenerate rectangles starting at (0, 0). Candidate pairs come either
from a plain O(N^2) scan (`route="brute"`) or from a uniform grid index
(`route="indexed"`); both feed identical lex-sorted pair arrays into the
same accumulation code, so their outputs agree bit for bit.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import direction_in_cone, erode_window, unit_ball_volume
from .pattern import full_mark_set, thin

__all__ = [
    "Weights",
    "weights_from_function",
    "weights_from_estimate",
    "KSurface",
    "CylinderSet",
    "BallSet",
    "ConeSet",
    "BoxUnionSet",
    "PairGeometry",
    "pair_geometry",
    "k_measure_hat",
    "k_inhom",
    "k_ground",
    "k_smoothed",
    "k_cross_multitype",
    "k_stationary",
    "k_directional",
    "poisson_reference",
    "default_lag_grids",
]

_SCENARIOS = ("S1", "S2", "S3", "S4")


def _norm_scenario(scenario):
    s = f"S{scenario}" if isinstance(scenario, int) else str(scenario).upper()
    if s not in _SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {_SCENARIOS}")
    return s


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------


@dataclass
class Weights:
    """Per-point intensity evaluations used as estimator weights.

    ``lam`` holds the marked intensity at each point; ``lam_ground`` the
    ground (mark-integrated) intensity, needed only by scenarios 3-4 and
    by ground-process statistics. ``floor_hits`` counts points whose
    plugged estimate hit the evaluation floor (carried into surface
    metadata as a data-quality flag).
    """

    lam: np.ndarray = None
    lam_ground: np.ndarray = None
    source: str = "TrueIntensity"
    floor_hits: int = 0

    def __post_init__(self):
        for name in ("lam", "lam_ground"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(f"{name} must be a 1-d array of positive finite values")
            setattr(self, name, v)

    def _require(self, name, why):
        v = getattr(self, name)
        if v is None:
            raise ValueError(f"weights.{name} is required for {why}")
        return v


def weights_from_function(p, marked_fn=None, ground_fn=None, source="TrueIntensity"):
    """Evaluate intensity callables at the pattern's points.

    ``marked_fn(x, t, m)`` and ``ground_fn(x, t)`` take arrays and return
    per-point intensities.
    """
    lam = None if marked_fn is None else np.asarray(marked_fn(p.x, p.t, p.marks), dtype=float)
    lam_g = None if ground_fn is None else np.asarray(ground_fn(p.x, p.t), dtype=float)
    return Weights(lam=lam, lam_ground=lam_g, source=source)


def weights_from_estimate(est, ground_est=None):
    """Plug-in weights from intensity estimates (their own-point values)."""
    lam = est.weights_for_own_points()
    hits = est.floor_hits
    lam_g = None
    if ground_est is not None:
        lam_g = ground_est.weights_for_own_points()
        hits += ground_est.floor_hits
    return Weights(lam=lam, lam_ground=lam_g, source="PluggedEstimate", floor_hits=hits)


# --------------------------------------------------------------------------
# structuring sets (origin-centered templates applied at each first point)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CylinderSet:
    """Spatial ball of radius r times temporal interval [-t, t]."""

    r: float
    t: float

    def __post_init__(self):
        if self.r < 0 or self.t < 0:
            raise ValueError("cylinder lags must be nonnegative")

    def bounding_lags(self):
        return self.r, self.t

    def contains_lag(self, dx, dt):
        ds = np.sqrt(np.sum(np.asarray(dx, dtype=float) ** 2, axis=1))
        return (ds <= self.r) & (np.abs(dt) <= self.t)

    def volume(self, d):
        return 2.0 * self.t * self.r**d * unit_ball_volume(d)


@dataclass(frozen=True)
class BallSet:
    """Sup-metric ball of radius r, identical to CylinderSet(r, r)."""

    r: float

    def bounding_lags(self):
        return self.r, self.r

    def contains_lag(self, dx, dt):
        return CylinderSet(self.r, self.r).contains_lag(dx, dt)

    def volume(self, d):
        return CylinderSet(self.r, self.r).volume(d)


@dataclass(frozen=True)
class ConeSet:
    """Double cone (planar double wedge [phi, psi] times [-t, t]) clipped
    to spatial radius r; requires d = 2. Boundary directions are included
    (closed set)."""

    phi: float
    psi: float
    r: float
    t: float

    def __post_init__(self):
        if not -math.pi / 2 <= self.phi < math.pi / 2:
            raise ValueError("phi must lie in [-pi/2, pi/2)")
        if not self.phi < self.psi <= self.phi + math.pi:
            raise ValueError("psi must lie in (phi, phi + pi]")
        if self.r < 0 or self.t < 0:
            raise ValueError("cone lags must be nonnegative")

    def bounding_lags(self):
        return self.r, self.t

    def contains_lag(self, dx, dt):
        dx = np.asarray(dx, dtype=float)
        if dx.shape[1] != 2:
            raise ValueError("cone sets require two spatial dimensions")
        ds = np.sqrt(np.sum(dx**2, axis=1))
        ok = (ds <= self.r) & (np.abs(dt) <= self.t)
        return ok & direction_in_cone(dx[:, 0], dx[:, 1], self.phi, self.psi)

    def volume(self, d=2):
        return (self.psi - self.phi) * self.r**2 * 2.0 * self.t


@dataclass(frozen=True)
class BoxUnionSet:
    """Union of closed axis-aligned space-time boxes around the origin.
    ``boxes`` is a tuple of (spatial_bounds, temporal_bounds) pairs, each
    spatial_bounds a tuple of per-axis (lo, hi)."""

    boxes: tuple

    def bounding_lags(self):
        r2 = 0.0
        t = 0.0
        for spatial, temporal in self.boxes:
            r2 = max(r2, sum(max(lo**2, hi**2) for lo, hi in spatial))
            t = max(t, abs(temporal[0]), abs(temporal[1]))
        return math.sqrt(r2), t

    def contains_lag(self, dx, dt):
        dx = np.asarray(dx, dtype=float)
        dt = np.asarray(dt, dtype=float)
        out = np.zeros(dx.shape[0], dtype=bool)
        for spatial, temporal in self.boxes:
            ok = (dt >= temporal[0]) & (dt <= temporal[1])
            for a, (lo, hi) in enumerate(spatial):
                ok &= (dx[:, a] >= lo) & (dx[:, a] <= hi)
            out |= ok
        return out


# --------------------------------------------------------------------------
# pair geometry: everything about a (pattern, lag grid) combination that
# does not depend on marks or weights — reusable across mark permutations
# --------------------------------------------------------------------------


@dataclass
class PairGeometry:
    r_grid: np.ndarray
    t_grid: np.ndarray
    I: np.ndarray            # first-point indices of candidate ordered pairs
    J: np.ndarray            # second-point indices
    dx: np.ndarray           # spatial displacements x[J] - x[I]
    ds: np.ndarray           # Euclidean spatial lags
    du: np.ndarray           # absolute temporal lags
    a_r: np.ndarray          # first r-cell each pair can enter
    a_t: np.ndarray          # first t-cell each pair can enter
    pt_b_r: np.ndarray       # last r-cell where each point stays eroded-in
    pt_b_t: np.ndarray       # last t-cell where each point stays eroded-in
    ell_r: np.ndarray        # eroded spatial volumes per r-cell
    ell_t: np.ndarray        # eroded temporal lengths per t-cell
    erosion: str             # "per-cell" | "fixed"
    route: str

    @property
    def shape(self):
        return self.r_grid.size, self.t_grid.size


def _margins(p):
    lo, hi = p.window.spatial_bounds()
    margin_s = np.min(np.minimum(p.x - lo, hi - p.x), axis=1)
    margin_t = np.minimum(p.t - p.window.temporal[0], p.window.temporal[1] - p.t)
    return margin_s, margin_t


def _pairs_brute(p, t_max, chunk=512):
    out_i, out_j = [], []
    n = p.n
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        du = np.abs(p.t[start:stop, None] - p.t[None, :])
        mask = du <= t_max
        ii, jj = np.nonzero(mask)
        ii += start
        keep = ii != jj
        out_i.append(ii[keep])
        out_j.append(jj[keep])
    if not out_i:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    return np.concatenate(out_i), np.concatenate(out_j)


def _pairs_indexed(p, r_max, t_max):
    """Candidate pairs from a uniform space-time cell index: each point is
    matched against points in its own and adjacent cells, a superset of
    all pairs within (r_max, t_max)."""
    lo, hi = p.window.spatial_bounds()
    sizes = [max(1, int(math.ceil((hi[a] - lo[a]) / r_max)) if r_max > 0 else 1)
             for a in range(p.dim)]
    tl = p.window.temporal_length
    sizes.append(max(1, int(math.ceil(tl / t_max)) if t_max > 0 else 1))
    coords = []
    for a in range(p.dim):
        width = (hi[a] - lo[a]) / sizes[a]
        coords.append(np.clip(((p.x[:, a] - lo[a]) / width).astype(np.intp), 0, sizes[a] - 1))
    widtht = tl / sizes[-1]
    coords.append(
        np.clip(((p.t - p.window.temporal[0]) / widtht).astype(np.intp), 0, sizes[-1] - 1)
    )
    strides = np.ones(len(sizes), dtype=np.intp)
    for a in range(len(sizes) - 2, -1, -1):
        strides[a] = strides[a + 1] * sizes[a + 1]
    key = sum(coords[a] * strides[a] for a in range(len(sizes)))
    order = np.argsort(key, kind="stable")
    sorted_keys = key[order]
    all_idx = np.arange(p.n, dtype=np.intp)
    out_i, out_j = [], []
    offsets = np.stack(
        np.meshgrid(*[[-1, 0, 1]] * len(sizes), indexing="ij"), axis=-1
    ).reshape(-1, len(sizes))
    for off in offsets:
        valid = np.ones(p.n, dtype=bool)
        nk = np.zeros(p.n, dtype=np.intp)
        for a in range(len(sizes)):
            ca = coords[a] + off[a]
            valid &= (ca >= 0) & (ca < sizes[a])
            nk += np.where(valid, ca, 0) * strides[a]
        src = all_idx[valid]
        nk = nk[valid]
        left = np.searchsorted(sorted_keys, nk, side="left")
        right = np.searchsorted(sorted_keys, nk, side="right")
        counts = right - left
        total = int(counts.sum())
        if total == 0:
            continue
        starts_excl = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pos = np.arange(total) + np.repeat(left - starts_excl, counts)
        jj = order[pos]
        ii = np.repeat(src, counts)
        keep = ii != jj
        out_i.append(ii[keep])
        out_j.append(jj[keep])
    if not out_i:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    return np.concatenate(out_i), np.concatenate(out_j)


def pair_geometry(p, r_grid, t_grid, route="indexed", erosion="per-cell"):
    """Build the mark-independent pair/erosion geometry for a lag grid.

    Validates that the window survives erosion at the maximal lags. The
    result can be reused across any number of weight/mark-set evaluations
    on the same point locations (e.g. mark permutations).
    """
    r_grid = np.asarray(r_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    for g, name in ((r_grid, "r_grid"), (t_grid, "t_grid")):
        if g.ndim != 1 or g.size == 0 or np.any(g < 0) or np.any(np.diff(g) <= 0):
            raise ValueError(f"{name} must be a nondecreasing positive lag vector")
    if erosion not in ("per-cell", "fixed"):
        raise ValueError("erosion must be 'per-cell' or 'fixed'")
    if route not in ("indexed", "brute"):
        raise ValueError("route must be 'indexed' or 'brute'")
    r_max, t_max = float(r_grid[-1]), float(t_grid[-1])
    erode_window(p.window, r_max, t_max)  # raises ErosionError if too large

    if route == "brute":
        I, J = _pairs_brute(p, t_max)
    else:
        I, J = _pairs_indexed(p, r_max, t_max)
    if I.size:
        dx = p.x[J] - p.x[I]
        du = np.abs(p.t[J] - p.t[I])
        ds = np.sqrt(np.sum(dx * dx, axis=1))
        keep = (ds <= r_max) & (du <= t_max)
        I, J, dx, ds, du = I[keep], J[keep], dx[keep], ds[keep], du[keep]
        order = np.lexsort((J, I))
        I, J, dx, ds, du = I[order], J[order], dx[order], ds[order], du[order]
    else:
        dx = np.empty((0, p.dim))
        ds = np.empty(0)
        du = np.empty(0)

    margin_s, margin_t = _margins(p)
    R, T = r_grid.size, t_grid.size
    if erosion == "per-cell":
        pt_b_r = np.searchsorted(r_grid, margin_s, side="right") - 1
        pt_b_t = np.searchsorted(t_grid, margin_t, side="right") - 1
        lo, hi = p.window.spatial_bounds()
        ell_r = np.prod([(hi[a] - lo[a]) - 2.0 * r_grid for a in range(p.dim)], axis=0)
        ell_t = p.window.temporal_length - 2.0 * t_grid
    else:
        eligible = (margin_s >= r_max) & (margin_t >= t_max)
        pt_b_r = np.where(eligible, R - 1, -1)
        pt_b_t = np.where(eligible, T - 1, -1)
        lo, hi = p.window.spatial_bounds()
        ell_r = np.full(R, np.prod([(hi[a] - lo[a]) - 2.0 * r_max for a in range(p.dim)]))
        ell_t = np.full(T, p.window.temporal_length - 2.0 * t_max)
    a_r = np.searchsorted(r_grid, ds, side="left")
    a_t = np.searchsorted(t_grid, du, side="left")
    return PairGeometry(
        r_grid=r_grid, t_grid=t_grid, I=I, J=J, dx=dx, ds=ds, du=du,
        a_r=a_r, a_t=a_t, pt_b_r=pt_b_r, pt_b_t=pt_b_t,
        ell_r=ell_r, ell_t=ell_t, erosion=erosion, route=route,
    )


def _accumulate_rect(a_r, b_r, a_t, b_t, w, R, T):
    """Sum w over index rectangles [a_r..b_r] x [a_t..b_t]: four-corner
    difference array + double cumulative sum. The corner contributions are
    concatenated in a fixed layout so any two callers feeding identical
    pair arrays get bit-identical cell totals."""
    valid = (a_r <= b_r) & (a_t <= b_t)
    ar = a_r[valid]
    br = b_r[valid]
    at = a_t[valid]
    bt = b_t[valid]
    wv = np.asarray(w, dtype=float)[valid]
    ncol = T + 1
    i00 = ar * ncol + at
    i10 = (br + 1) * ncol + at
    i01 = ar * ncol + (bt + 1)
    i11 = (br + 1) * ncol + (bt + 1)
    idx = np.concatenate([i00, i10, i01, i11])
    wts = np.concatenate([wv, -wv, -wv, wv])
    diff = np.bincount(idx, weights=wts, minlength=(R + 1) * ncol).reshape(R + 1, ncol)
    return np.cumsum(np.cumsum(diff, axis=0), axis=1)[:R, :T]


def _point_surface(geom, point_w):
    """Per-cell sums of point weights over the eroded windows (rectangle
    from cell (0,0) to each point's erosion limit)."""
    R, T = geom.shape
    zeros = np.zeros(point_w.shape[0], dtype=np.intp)
    return _accumulate_rect(zeros, geom.pt_b_r, zeros, geom.pt_b_t, point_w, R, T)


def _denominator(geom, scenario, nu_C, nu_D, inv_lam, inv_lam_g, mC, mD):
    ell = np.outer(geom.ell_r, geom.ell_t)
    if scenario == "S1":
        return ell * (nu_C * nu_D)
    if scenario == "S2":
        S_C = _point_surface(geom, inv_lam * mC)
        S_D = _point_surface(geom, inv_lam * mD)
        return S_C * S_D / ell
    G = _point_surface(geom, inv_lam_g)
    if scenario == "S3":
        return (nu_C * nu_D) * G
    S_C = _point_surface(geom, inv_lam * mC)
    S_D = _point_surface(geom, inv_lam * mD)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(G > 0, S_C * S_D / G, 0.0)


def _ratio(num, denom):
    """num/denom with the convention that degenerate cells give 0: an empty
    numerator means no qualifying pairs, and an empty denominator means no
    eligible points were available to estimate the normalizing masses.
    Either way the cell carries no information."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where((num == 0) | (denom == 0), 0.0, num / denom)
    return out


# --------------------------------------------------------------------------
# surfaces
# --------------------------------------------------------------------------


@dataclass
class KSurface:
    """A K-function estimate over a rectangular lag grid.

    ``values[i, j]`` is the estimate at (r_grid[i], t_grid[j]). ``C`` and
    ``D`` are the mark sets (None for ground statistics), ``scenario`` the
    normalizing-measure treatment, ``weights_source`` one of
    TrueIntensity / PluggedEstimate / Smoothed(n, p). ``meta`` carries
    data-quality items (floor hits, erosion mode, spread of smoothing
    replicates, degenerate-thinning count, seeds).
    """

    r_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    C: object
    D: object
    scenario: str
    weights_source: str
    d: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r_grid = np.asarray(self.r_grid, dtype=float)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.r_grid.size, self.t_grid.size):
            raise ValueError("values shape does not match lag grids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("surface values must be finite")

    def poisson_surface(self):
        """The Poisson benchmark 2 t r^d omega_d on the same grid."""
        wd = unit_ball_volume(self.d)
        return np.outer(self.r_grid**self.d, 2.0 * self.t_grid) * wd

    def diff_poisson(self):
        return self.values - self.poisson_surface()

    def write_csv(self, path):
        """Long-format rows r,t,k_hat,k_poisson,diff."""
        import csv

        ref = self.poisson_surface()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "t", "k_hat", "k_poisson", "diff"])
            for i, r in enumerate(self.r_grid):
                for j, t in enumerate(self.t_grid):
                    w.writerow(
                        [repr(float(r)), repr(float(t)), repr(float(self.values[i, j])),
                         repr(float(ref[i, j])), repr(float(self.values[i, j] - ref[i, j]))]
                    )

    def write_meta(self, path):
        doc = {
            "C": str(self.C),
            "D": str(self.D),
            "scenario": self.scenario,
            "weights_source": self.weights_source,
            "d": self.d,
            "r_grid": [float(v) for v in self.r_grid],
            "t_grid": [float(v) for v in self.t_grid],
            "meta": _jsonable(self.meta),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    return str(obj)


def default_lag_grids(window, n=20):
    """20-cell lag grids reaching a quarter of the shorter spatial side and
    a quarter of the temporal extent."""
    lo, hi = window.spatial_bounds()
    r_max = float(np.min(hi - lo)) / 4.0
    t_max = window.temporal_length / 4.0
    steps = np.arange(1, n + 1) / n
    return r_max * steps, t_max * steps


def poisson_reference(r_grid, t_grid, d):
    """The theoretical Poisson surface 2 t r^d omega_d."""
    r_grid = np.asarray(r_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    wd = unit_ball_volume(d)
    values = np.outer(r_grid**d, 2.0 * t_grid) * wd
    return KSurface(
        r_grid=r_grid, t_grid=t_grid, values=values, C=None, D=None,
        scenario="theory", weights_source="Poisson", d=d,
    )


def _mark_masks(p, C, D):
    if p.marks is None:
        if C is not None or D is not None:
            raise ValueError("mark sets supplied for an unmarked pattern")
        ones = np.ones(p.n)
        return ones, ones.copy()
    C = full_mark_set(p.mark_space) if C is None else C
    D = full_mark_set(p.mark_space) if D is None else D
    return C.mask(p.marks).astype(float), D.mask(p.marks).astype(float)


def k_inhom(
    p,
    C=None,
    D=None,
    r_grid=None,
    t_grid=None,
    weights=None,
    scenario="S2",
    erosion="per-cell",
    route="indexed",
    symmetrize=False,
    geometry=None,
):
    """Marked inhomogeneous spatio-temporal K-function estimate.

    Parameters
    ----------
    p : MarkedPattern
    C, D : mark sets (None = full mark space)
    r_grid, t_grid : lag vectors (default: quarter-extent 20-cell grids)
    weights : Weights
        Marked intensity per point; scenarios S3/S4 additionally need
        ``lam_ground``.
    scenario : {"S1", "S2", "S3", "S4"} or 1..4
        Normalizing-measure treatment: S1 all known; S2 mark-set masses
        estimated; S3 window measure estimated; S4 both (ratio form).
    erosion : {"per-cell", "fixed"}
        Minus-sampling erosion varies with the lag cell (literal form) or
        is fixed at the maximal lags for all cells.
    route : {"indexed", "brute"}
        Pair-search backend; results are bit-identical.
    symmetrize : bool
        Return the symmetrized estimate (mean of the CD and DC forms).
    geometry : PairGeometry, optional
        Precomputed geometry for these locations and grids (permutation
        fast path); ``route``/``erosion`` are taken from it.
    """
    if weights is None:
        raise ValueError("weights are required")
    if p.marks is None:
        raise ValueError("marked K needs a marked pattern; use k_ground instead")
    scenario = _norm_scenario(scenario)
    if r_grid is None or t_grid is None:
        dr, dt = default_lag_grids(p.window)
        r_grid = dr if r_grid is None else r_grid
        t_grid = dt if t_grid is None else t_grid
    geom = geometry
    if geom is None:
        geom = pair_geometry(p, r_grid, t_grid, route=route, erosion=erosion)
    mC, mD = _mark_masks(p, C, D)
    lam = weights._require("lam", "marked K estimation")
    inv_lam = 1.0 / lam
    inv_lam_g = None
    if scenario in ("S3", "S4"):
        inv_lam_g = 1.0 / weights._require("lam_ground", f"scenario {scenario}")
    nu_C = p.nu(C) if C is not None else p.nu_total()
    nu_D = p.nu(D) if D is not None else p.nu_total()
    if scenario in ("S1", "S3") and (nu_C <= 0 or nu_D <= 0):
        raise ValueError("mark sets must have positive reference measure")

    pw = inv_lam[geom.I] * inv_lam[geom.J]
    num = _accumulate_rect(
        geom.a_r, geom.pt_b_r[geom.I], geom.a_t, geom.pt_b_t[geom.I],
        pw * mC[geom.I] * mD[geom.J], *geom.shape,
    )
    denom = _denominator(geom, scenario, nu_C, nu_D, inv_lam, inv_lam_g, mC, mD)
    values = _ratio(num, denom)
    if symmetrize:
        num_dc = _accumulate_rect(
            geom.a_r, geom.pt_b_r[geom.I], geom.a_t, geom.pt_b_t[geom.I],
            pw * mD[geom.I] * mC[geom.J], *geom.shape,
        )
        denom_dc = _denominator(geom, scenario, nu_D, nu_C, inv_lam, inv_lam_g, mD, mC)
        values = 0.5 * (values + _ratio(num_dc, denom_dc))
    return KSurface(
        r_grid=geom.r_grid, t_grid=geom.t_grid, values=values,
        C=C, D=D, scenario=scenario, weights_source=weights.source, d=p.dim,
        meta={
            "erosion": geom.erosion,
            "route": geom.route,
            "floor_hits": weights.floor_hits,
            "symmetrized": bool(symmetrize),
            "nu_C": float(nu_C),
            "nu_D": float(nu_D),
        },
    )


def k_ground(p, r_grid=None, t_grid=None, weights=None, scenario="S1",
             erosion="per-cell", route="indexed", geometry=None):
    """Inhomogeneous space-time K-function of the ground process.

    Uses ``weights.lam_ground`` (or ``lam`` for unmarked patterns).
    ``scenario`` is "S1" (window measures known) or "S3" (window measures
    estimated by the reciprocal-intensity sum); the mark-set scenarios do
    not arise.
    """
    if weights is None:
        raise ValueError("weights are required")
    scenario = _norm_scenario(scenario)
    if scenario not in ("S1", "S3"):
        raise ValueError("ground K supports scenarios S1 and S3 only")
    lam_g = weights.lam_ground if weights.lam_ground is not None else weights.lam
    if lam_g is None:
        raise ValueError("weights.lam_ground (or lam) is required")
    if r_grid is None or t_grid is None:
        dr, dt = default_lag_grids(p.window)
        r_grid = dr if r_grid is None else r_grid
        t_grid = dt if t_grid is None else t_grid
    geom = geometry
    if geom is None:
        geom = pair_geometry(p, r_grid, t_grid, route=route, erosion=erosion)
    inv = 1.0 / lam_g
    num = _accumulate_rect(
        geom.a_r, geom.pt_b_r[geom.I], geom.a_t, geom.pt_b_t[geom.I],
        inv[geom.I] * inv[geom.J], *geom.shape,
    )
    if scenario == "S1":
        denom = np.outer(geom.ell_r, geom.ell_t)
    else:
        denom = _point_surface(geom, inv)
    values = _ratio(num, denom)
    return KSurface(
        r_grid=geom.r_grid, t_grid=geom.t_grid, values=values, C=None, D=None,
        scenario=scenario, weights_source=weights.source, d=p.dim,
        meta={"erosion": geom.erosion, "route": geom.route,
              "floor_hits": weights.floor_hits, "ground": True},
    )


def k_measure_hat(p, C, D, E, weights, return_report=False):
    """Minus-sampling estimate of the second-order reduced moment measure
    of a single structuring set E (known window and mark-set measures).

    The window is eroded by E's circumscribing cylinder lags; the sum runs
    over ordered distinct pairs with the first point in the eroded window
    with mark in C and the second point displaced into E with mark in D.
    """
    r_c, t_c = E.bounding_lags()
    erode_window(p.window, r_c, t_c)
    mC, mD = _mark_masks(p, C, D)
    if p.marks is not None:
        lam = weights._require("lam", "measure estimation")
        nu_C = p.nu(C) if C is not None else p.nu_total()
        nu_D = p.nu(D) if D is not None else p.nu_total()
    else:
        lam = weights.lam if weights.lam is not None else weights._require(
            "lam_ground", "measure estimation on an unmarked pattern"
        )
        nu_C = nu_D = 1.0
    inv = 1.0 / lam
    if nu_C <= 0 or nu_D <= 0:
        raise ValueError("mark sets must have positive reference measure")
    I, J = _pairs_brute(p, t_c)
    total = 0.0
    if I.size:
        dx = p.x[J] - p.x[I]
        du = p.t[J] - p.t[I]
        margin_s, margin_t = _margins(p)
        keep = (margin_s[I] >= r_c) & (margin_t[I] >= t_c)
        keep &= E.contains_lag(dx, du)
        keep &= (mC[I] > 0) & (mD[J] > 0)
        total = float(np.sum(inv[I[keep]] * inv[J[keep]]))
    eroded = erode_window(p.window, r_c, t_c)
    denom = eroded.spatial_volume * eroded.temporal_length * nu_C * nu_D
    value = 0.0 if total == 0.0 else total / denom
    if return_report:
        return value, {"floor_hits": weights.floor_hits, "pairs": int(I.size)}
    return value


def k_directional(p, C=None, D=None, phi=-math.pi / 2, psi=math.pi / 2,
                  r_grid=None, t_grid=None, weights=None, scenario="S2",
                  erosion="per-cell", route="indexed", geometry=None):
    """Directional marked inhomogeneous K-function: cylinder sets replaced
    by double cones over the wedge [phi, psi]. Requires d = 2. The full
    wedge (-pi/2, pi/2] reproduces k_inhom exactly."""
    if p.dim != 2:
        raise ValueError("directional K requires two spatial dimensions")
    ConeSet(phi, psi, 1.0, 1.0)  # validate angles
    if weights is None:
        raise ValueError("weights are required")
    if p.marks is None:
        raise ValueError("marked directional K needs a marked pattern")
    scenario = _norm_scenario(scenario)
    if r_grid is None or t_grid is None:
        dr, dt = default_lag_grids(p.window)
        r_grid = dr if r_grid is None else r_grid
        t_grid = dt if t_grid is None else t_grid
    geom = geometry
    if geom is None:
        geom = pair_geometry(p, r_grid, t_grid, route=route, erosion=erosion)
    mC, mD = _mark_masks(p, C, D)
    lam = weights._require("lam", "marked K estimation")
    inv_lam = 1.0 / lam
    inv_lam_g = None
    if scenario in ("S3", "S4"):
        inv_lam_g = 1.0 / weights._require("lam_ground", f"scenario {scenario}")
    nu_C = p.nu(C) if C is not None else p.nu_total()
    nu_D = p.nu(D) if D is not None else p.nu_total()
    in_cone = direction_in_cone(geom.dx[:, 0], geom.dx[:, 1], phi, psi).astype(float)
    pw = inv_lam[geom.I] * inv_lam[geom.J] * in_cone
    num = _accumulate_rect(
        geom.a_r, geom.pt_b_r[geom.I], geom.a_t, geom.pt_b_t[geom.I],
        pw * mC[geom.I] * mD[geom.J], *geom.shape,
    )
    denom = _denominator(geom, scenario, nu_C, nu_D, inv_lam, inv_lam_g, mC, mD)
    values = _ratio(num, denom)
    return KSurface(
        r_grid=geom.r_grid, t_grid=geom.t_grid, values=values, C=C, D=D,
        scenario=scenario, weights_source=weights.source, d=p.dim,
        meta={"erosion": geom.erosion, "route": geom.route, "phi": phi, "psi": psi,
              "floor_hits": weights.floor_hits},
    )


def k_cross_multitype(p, i, j, r_grid=None, t_grid=None, weights=None,
                      erosion="per-cell", route="indexed", geometry=None):
    """i-to-j cross K-function for multitype (label-marked) patterns.

    ``weights.lam`` must hold each point's own-component ground intensity
    (the intensity of the sub-process carrying that point's label). The
    normalization uses eroded window measures only: the result does not
    depend on the label reference weights. ``i == j`` gives component i's
    space-time K-function.
    """
    from .pattern import LabelSet

    if p.marks is None or not p.mark_space.is_labelled:
        raise ValueError("cross K requires a label-marked pattern")
    if weights is None:
        raise ValueError("weights are required")
    lam = weights._require("lam", "cross K estimation")
    n_i = int(np.sum(p.marks == i))
    n_j = int(np.sum(p.marks == j))
    if n_i == 0 or n_j == 0:
        warnings.warn(f"component {i if n_i == 0 else j} is empty; surface is zero")
    if r_grid is None or t_grid is None:
        dr, dt = default_lag_grids(p.window)
        r_grid = dr if r_grid is None else r_grid
        t_grid = dt if t_grid is None else t_grid
    geom = geometry
    if geom is None:
        geom = pair_geometry(p, r_grid, t_grid, route=route, erosion=erosion)
    mC = LabelSet([i]).mask(p.marks).astype(float)
    mD = LabelSet([j]).mask(p.marks).astype(float)
    inv = 1.0 / lam
    num = _accumulate_rect(
        geom.a_r, geom.pt_b_r[geom.I], geom.a_t, geom.pt_b_t[geom.I],
        inv[geom.I] * inv[geom.J] * mC[geom.I] * mD[geom.J], *geom.shape,
    )
    denom = np.outer(geom.ell_r, geom.ell_t)
    values = _ratio(num, denom)
    return KSurface(
        r_grid=geom.r_grid, t_grid=geom.t_grid, values=values,
        C=LabelSet([i]), D=LabelSet([j]), scenario="cross",
        weights_source=weights.source, d=p.dim,
        meta={"erosion": geom.erosion, "route": geom.route, "i": i, "j": j,
              "floor_hits": weights.floor_hits},
    )


def k_stationary(p, C=None, D=None, r_grid=None, t_grid=None,
                 erosion="per-cell", route="indexed"):
    """Stationary marked space-time K-function: constant intensity
    N/volume and empirical mark-set masses N_C N_D / N^2 plugged into the
    minus-sampling form. With C = D = full mark space this is the unmarked
    stationary estimator."""
    if p.n == 0:
        raise ValueError("stationary K needs a nonempty pattern")
    if r_grid is None or t_grid is None:
        dr, dt = default_lag_grids(p.window)
        r_grid = dr if r_grid is None else r_grid
        t_grid = dt if t_grid is None else t_grid
    geom = pair_geometry(p, r_grid, t_grid, route=route, erosion=erosion)
    if p.marks is None:
        mC = mD = np.ones(p.n)
    else:
        mC, mD = _mark_masks(p, C, D)
    lam_hat = p.n / p.window.volume
    n_C = float(np.sum(mC))
    n_D = float(np.sum(mD))
    inv = np.full(p.n, 1.0 / lam_hat)
    num = _accumulate_rect(
        geom.a_r, geom.pt_b_r[geom.I], geom.a_t, geom.pt_b_t[geom.I],
        inv[geom.I] * inv[geom.J] * mC[geom.I] * mD[geom.J], *geom.shape,
    )
    denom = np.outer(geom.ell_r, geom.ell_t) * (n_C * n_D / p.n**2)
    values = _ratio(num, denom)
    return KSurface(
        r_grid=geom.r_grid, t_grid=geom.t_grid, values=values, C=C, D=D,
        scenario="stationary", weights_source="Stationary", d=p.dim,
        meta={"erosion": geom.erosion, "route": geom.route,
              "n_C": n_C, "n_D": n_D},
    )


def k_smoothed(p, C=None, D=None, r_grid=None, t_grid=None, weights_builder=None,
               retention=0.5, n=10, scenario="S2", erosion="per-cell",
               route="indexed", symmetrize=False, seed=None, threads=1):
    """Smoothed K-function: the average of estimates over n independent
    p-thinnings of the pattern.

    ``weights_builder(thinned_pattern, retention)`` must return Weights for
    the thinned process (whose intensity is retention times the original;
    plug-in estimators refit on the thinned pattern target this
    automatically, true-intensity callers must scale by the retention).
    Thinnings left without C- or D-points contribute all-zero surfaces;
    their count is reported in the metadata.
    """
    if not 0.0 < retention < 1.0:
        raise ValueError("retention must lie in (0, 1)")
    if n < 1:
        raise ValueError("need at least one thinning")
    if weights_builder is None:
        raise ValueError("a weights_builder is required")
    if p.marks is None:
        raise ValueError("smoothing is defined for marked patterns")
    if r_grid is None or t_grid is None:
        dr, dt = default_lag_grids(p.window)
        r_grid = dr if r_grid is None else r_grid
        t_grid = dt if t_grid is None else t_grid
    children = np.random.SeedSequence(seed).spawn(n)
    shape = (np.asarray(r_grid).size, np.asarray(t_grid).size)

    def one(child):
        q = thin(p, retention, seed=child)
        if q.n == 0:
            return None
        mC, mD = _mark_masks(q, C, D)
        if not np.any(mC) or not np.any(mD):
            return None
        w = weights_builder(q, retention)
        surf = k_inhom(q, C, D, r_grid, t_grid, w, scenario=scenario,
                       erosion=erosion, route=route, symmetrize=symmetrize)
        return surf.values

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, children))
    else:
        results = [one(child) for child in children]
    degenerate = sum(1 for v in results if v is None)
    surfaces = [np.zeros(shape) if v is None else v for v in results]
    stack = np.stack(surfaces)
    mean = stack.mean(axis=0)
    spread = stack.std(axis=0, ddof=1) if n > 1 else np.zeros(shape)
    return KSurface(
        r_grid=np.asarray(r_grid, dtype=float), t_grid=np.asarray(t_grid, dtype=float),
        values=mean, C=C, D=D, scenario=_norm_scenario(scenario),
        weights_source=f"Smoothed(n={n}, p={retention})", d=p.dim,
        meta={"erosion": erosion, "route": route, "retention": retention,
              "n_thinnings": n, "degenerate_thinnings": degenerate,
              "seed": str(seed), "spread": spread},
    )
