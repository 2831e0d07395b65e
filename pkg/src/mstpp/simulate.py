"""
Generators for the benchmark models and their building blocks:
inhomogeneous Poisson processes (dominating-rate thinning), Gaussian
random fields on regular grids (dense factorization), log-Gaussian Cox
processes, iid and geostatistical marking schemes, and superposition of
components into a multitype pattern.

All generators are pure functions of (inputs, seed) and safe to run
concurrently with independent seeds.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kv as _bessel_kv

from .geometry import Window
from .pattern import ContinuousMarks, LabelMarks, MarkedPattern

__all__ = [
    "WhittleMatern",
    "Exponential",
    "Constant",
    "SeparableCovariance",
    "IntensityField",
    "GridField",
    "FactorizationError",
    "Bernoulli",
    "UniformInterval",
    "UserTable",
    "sim_poisson",
    "GRFSampler",
    "sim_grf",
    "sim_lgcp",
    "assign_marks_iid",
    "assign_marks_geostat",
    "superpose",
    "simulate_preset",
    "preset_sampler",
    "poisson_preset_intensity",
    "lgcp_mean",
    "PRESET_NAMES",
    "UNIT_WINDOW",
    "SIGMA2",
]

DENSE_CELL_GUARD = 8000
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class FactorizationError(RuntimeError):
    """Covariance matrix not positive definite after the jitter ladder."""


@dataclass(frozen=True)
class WhittleMatern:
    """Stationary isotropic Whittle-Matern covariance
    C(h) = sigma2 * (2^(1-nu)/Gamma(nu)) * (c h)^nu * K_nu(c h), with
    C(0) = sigma2 by continuity and the c = 0 limit constant at sigma2.

    Closed forms are used at nu in {0.5, 1.5, 2.5}; other smoothness
    values fall back to the modified Bessel function.
    """

    sigma2: float
    nu: float
    c: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.c < 0:
            raise ValueError("c must be nonnegative")

    def value(self, h):
        h = np.asarray(h, dtype=float)
        if self.c == 0.0:
            return np.full(h.shape, self.sigma2)
        ch = self.c * h
        if self.nu == 0.5:
            out = np.exp(-ch)
        elif self.nu == 1.5:
            out = (1.0 + ch) * np.exp(-ch)
        elif self.nu == 2.5:
            out = (1.0 + ch + ch * ch / 3.0) * np.exp(-ch)
        else:
            out = np.ones_like(ch)
            pos = ch > 0
            chp = ch[pos]
            out[pos] = (
                (2.0 ** (1.0 - self.nu) / math.gamma(self.nu))
                * chp**self.nu
                * _bessel_kv(self.nu, chp)
            )
        return self.sigma2 * out


@dataclass(frozen=True)
class Exponential:
    """Unit-variance exponential covariance C(h) = exp(-h / scale)."""

    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def value(self, h):
        return np.exp(-np.asarray(h, dtype=float) / self.scale)


@dataclass(frozen=True)
class Constant:
    """Constant covariance C(h) = level for every lag (h = 0 included)."""

    level: float = 1.0

    def value(self, h):
        return np.full(np.asarray(h, dtype=float).shape, float(self.level))


@dataclass(frozen=True)
class SeparableCovariance:
    """Separable space-time product C(h, u) = C_S(h) * C_T(u)."""

    spatial: object
    temporal: object

    def value(self, h, u):
        return self.spatial.value(h) * self.temporal.value(u)

    def matrix(self, x, t):
        """Covariance matrix for points with spatial rows x (N, d) and
        times t (N,)."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        diff = x[:, None, :] - x[None, :, :]
        h = np.sqrt(np.sum(diff * diff, axis=2))
        u = np.abs(t[:, None] - t[None, :])
        return self.value(h, u)


@dataclass(frozen=True)
class IntensityField:
    """A deterministic intensity function (x, t) -> lambda >= 0 on a window
    together with a finite dominating bound lam_max.

    ``fn`` is called with arrays (x (N, d), t (N,)) and must return (N,).
    """

    fn: object
    window: Window
    lam_max: float

    @classmethod
    def from_function(cls, fn, window, lam_max=None, scan=41):
        """Wrap a function, obtaining lam_max by a grid scan (``scan`` nodes
        per axis) with a 5% safety factor when no analytic bound is given."""
        if lam_max is None:
            lo, hi = window.spatial_bounds()
            axes = [np.linspace(lo[i], hi[i], scan) for i in range(window.dim)]
            axes.append(np.linspace(window.temporal[0], window.temporal[1], scan))
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.column_stack([m.ravel() for m in mesh])
            vals = np.asarray(fn(pts[:, :-1], pts[:, -1]), dtype=float)
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ValueError("intensity must be finite and nonnegative")
            lam_max = float(vals.max()) * 1.05
        return cls(fn=fn, window=window, lam_max=float(lam_max))


@dataclass(frozen=True)
class GridField:
    """A field realized on a regular grid over a d = 2 window, evaluated
    off-grid by nearest cell center."""

    window: Window
    shape: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(self.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def cell_edges(self):
        (x_lo, x_hi), (y_lo, y_hi) = self.window.spatial
        t_lo, t_hi = self.window.temporal
        nx, ny, nt = self.shape
        return (
            np.linspace(x_lo, x_hi, nx + 1),
            np.linspace(y_lo, y_hi, ny + 1),
            np.linspace(t_lo, t_hi, nt + 1),
        )

    def cell_centers(self):
        ex, ey, et = self.cell_edges()
        return (ex[:-1] + ex[1:]) / 2, (ey[:-1] + ey[1:]) / 2, (et[:-1] + et[1:]) / 2

    @property
    def cell_volume(self):
        nx, ny, nt = self.shape
        return self.window.volume / (nx * ny * nt)

    def at(self, x, t):
        """Nearest-cell evaluation for arrays x (N, 2), t (N,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float).ravel()
        ex, ey, et = self.cell_edges()
        nx, ny, nt = self.shape
        ix = np.clip(np.searchsorted(ex, x[:, 0], side="right") - 1, 0, nx - 1)
        iy = np.clip(np.searchsorted(ey, x[:, 1], side="right") - 1, 0, ny - 1)
        it = np.clip(np.searchsorted(et, t, side="right") - 1, 0, nt - 1)
        return self.values[ix, iy, it]


def sim_poisson(field, seed=None):
    """Inhomogeneous Poisson sampling by dominating-rate thinning: draw
    N_dom ~ Poisson(lam_max |W|) uniform proposals and retain each with
    probability lambda(x, t) / lam_max. Returns a ground pattern whose
    count has mean integral(lambda).

    Raises
    ------
    ValueError
        If an evaluated intensity exceeds the declared lam_max.
    """
    rng = np.random.default_rng(seed)
    w = field.window
    n_dom = rng.poisson(field.lam_max * w.volume)
    lo, hi = w.spatial_bounds()
    x = lo + rng.random((n_dom, w.dim)) * (hi - lo)
    t = w.temporal[0] + rng.random(n_dom) * w.temporal_length
    lam = np.asarray(field.fn(x, t), dtype=float) if n_dom else np.zeros(0)
    if lam.size and lam.max() > field.lam_max * (1 + 1e-12):
        raise ValueError("intensity exceeds the declared dominating bound lam_max")
    keep = rng.random(n_dom) * field.lam_max < lam
    return MarkedPattern(x=x[keep], t=t[keep], marks=None, window=w, mark_space=None)


def _chol_with_jitter(cov):
    # smallest ladder jitter that makes the factorization succeed
    n = cov.shape[0]
    for jit in JITTER_LADDER:
        try:
            return np.linalg.cholesky(cov + jit * np.eye(n)), jit
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"covariance matrix not positive definite after jitter up to {JITTER_LADDER[-1]}"
    )


@dataclass(frozen=True)
class GRFSampler:
    """Precomputed lattice Gaussian-field sampler: cell-center mean vector
    plus the Cholesky factor of the covariance matrix. Building it is the
    expensive step; ``sample`` is a matrix-vector product, so one sampler
    serves any number of replicates."""

    window: Window
    shape: tuple
    mean: np.ndarray
    factor: np.ndarray
    jitter: float

    @classmethod
    def build(cls, mean_fn, cov, shape, window):
        nx, ny, nt = (int(s) for s in shape)
        if nx * ny * nt > DENSE_CELL_GUARD:
            raise ValueError(
                f"grid has {nx * ny * nt} cells; dense guard is {DENSE_CELL_GUARD}"
            )
        grid = GridField(window=window, shape=(nx, ny, nt), values=np.zeros((nx, ny, nt)))
        cx, cy, ct = grid.cell_centers()
        mx, my, mt = np.meshgrid(cx, cy, ct, indexing="ij")
        xs = np.column_stack([mx.ravel(), my.ravel()])
        ts = mt.ravel()
        mean = np.asarray(mean_fn(xs[:, 0], xs[:, 1], ts), dtype=float)
        cov_mat = cov.matrix(xs, ts)
        factor, jitter = _chol_with_jitter(cov_mat)
        return cls(window=window, shape=(nx, ny, nt), mean=mean, factor=factor,
                   jitter=jitter)

    def sample(self, seed=None):
        rng = np.random.default_rng(seed)
        z = self.factor @ rng.standard_normal(self.mean.size)
        nx, ny, nt = self.shape
        return GridField(window=self.window, shape=self.shape,
                         values=(self.mean + z).reshape(nx, ny, nt))


def sim_grf(mean_fn, cov, shape, window, seed=None):
    """Exact Gaussian random field draw on a regular (nx, ny, nt) grid by
    dense factorization of the covariance matrix.

    ``mean_fn(x, y, t)`` is evaluated vectorized at cell centers;
    ``cov`` is a SeparableCovariance. Grids above the dense guard
    (8000 cells) are refused. For repeated draws build a ``GRFSampler``
    once and call its ``sample`` instead.
    """
    return GRFSampler.build(mean_fn, cov, shape, window).sample(seed)


def sim_lgcp(mean_fn=None, cov=None, shape=None, window=None, seed=None,
             sampler=None):
    """Log-Gaussian Cox sampling: draw a Gaussian field on the grid, treat
    exp(field) as a piecewise-constant intensity per cell, then draw
    Poisson counts per cell with uniform placement inside each cell.

    The discretization error is O(cell diameter). Returns a ground pattern.
    Pass a prebuilt ``sampler`` (GRFSampler) to amortize the factorization
    across replicates; otherwise one is built from (mean_fn, cov, shape,
    window).
    """
    if sampler is None:
        if mean_fn is None or cov is None or shape is None or window is None:
            raise ValueError("either a sampler or (mean_fn, cov, shape, window)")
        sampler = GRFSampler.build(mean_fn, cov, shape, window)
    window = sampler.window
    rng = np.random.default_rng(seed)
    field = sampler.sample(rng)
    lam = np.exp(field.values).ravel()
    counts = rng.poisson(lam * field.cell_volume)
    total = int(counts.sum())
    ex, ey, et = field.cell_edges()
    nx, ny, nt = field.shape
    idx = np.repeat(np.arange(lam.size), counts)
    ix, iy, it = np.unravel_index(idx, (nx, ny, nt))
    u = rng.random((total, 3))
    x = np.column_stack(
        [
            ex[ix] + u[:, 0] * (ex[ix + 1] - ex[ix]),
            ey[iy] + u[:, 1] * (ey[iy + 1] - ey[iy]),
        ]
    )
    t = et[it] + u[:, 2] * (et[it + 1] - et[it])
    return MarkedPattern(x=x, t=t, marks=None, window=window, mark_space=None)


@dataclass(frozen=True)
class Bernoulli:
    """Two-label iid marking: label 2 ("success") with probability p,
    label 1 otherwise."""

    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")

    def default_space(self):
        return LabelMarks(k=2)

    def draw(self, n, rng):
        return np.where(rng.random(n) < self.p, 2.0, 1.0)


@dataclass(frozen=True)
class UniformInterval:
    """Iid marks uniform on [lo, hi]."""

    lo: float = 0.0
    hi: float = 1.0

    def default_space(self):
        return ContinuousMarks(self.lo, self.hi, reference="lebesgue")

    def draw(self, n, rng):
        return self.lo + rng.random(n) * (self.hi - self.lo)


@dataclass(frozen=True)
class UserTable:
    """Iid label marks with user-supplied probabilities for labels 1..k."""

    probs: tuple

    def __post_init__(self):
        probs = tuple(float(v) for v in self.probs)
        if len(probs) < 2 or any(v < 0 for v in probs) or not math.isclose(sum(probs), 1.0):
            raise ValueError("need k >= 2 nonnegative probabilities summing to 1")
        object.__setattr__(self, "probs", probs)

    def default_space(self):
        return LabelMarks(k=len(self.probs))

    def draw(self, n, rng):
        return rng.choice(np.arange(1, len(self.probs) + 1, dtype=float), size=n, p=self.probs)


def assign_marks_iid(ground, law, seed=None, mark_space=None):
    """Random labelling: iid marks given the ground pattern, drawn from the
    law (Bernoulli, UniformInterval, or UserTable)."""
    if ground.is_marked:
        raise ValueError("pattern already carries marks")
    rng = np.random.default_rng(seed)
    marks = law.draw(ground.n, rng)
    space = mark_space if mark_space is not None else law.default_space()
    return ground.with_marks(marks, space)


def assign_marks_geostat(ground, cov, seed=None, mark_space=None, mean=0.0):
    """Geostatistical marking: the marks are one joint Gaussian draw at the
    N ground locations under the given space-time covariance (exact, no
    grid). The default mark space is the interval [-8, 8] with Lebesgue
    reference, wide enough that standard-Gaussian marks never leave it in
    practice."""
    if ground.is_marked:
        raise ValueError("pattern already carries marks")
    if ground.n > DENSE_CELL_GUARD:
        raise ValueError(f"{ground.n} points exceed the dense factorization guard")
    rng = np.random.default_rng(seed)
    if ground.n == 0:
        marks = np.zeros(0)
    else:
        cov_mat = cov.matrix(ground.x, ground.t)
        factor, _ = _chol_with_jitter(cov_mat)
        marks = mean + factor @ rng.standard_normal(ground.n)
    space = mark_space if mark_space is not None else ContinuousMarks(-8.0, 8.0, "lebesgue")
    return ground.with_marks(marks, space)


def superpose(components, mark_space=None):
    """Multitype superposition: component i receives label i + 1; windows
    must match exactly. Accepts ground patterns (typical) or marked ones
    (their marks are replaced by the component label)."""
    if not components:
        raise ValueError("need at least one component")
    window = components[0].window
    for p in components[1:]:
        if p.window != window:
            raise ValueError("component windows must match")
    k = len(components)
    space = mark_space if mark_space is not None else LabelMarks(k=max(k, 2))
    x = np.concatenate([p.x for p in components], axis=0)
    t = np.concatenate([p.t for p in components])
    marks = np.concatenate([np.full(p.n, float(i + 1)) for i, p in enumerate(components)])
    return MarkedPattern(x=x, t=t, marks=marks, window=window, mark_space=space)


# --------------------------------------------------------------------------
# benchmark model presets
# --------------------------------------------------------------------------

UNIT_WINDOW = Window(spatial=((0.0, 1.0), (0.0, 1.0)), temporal=(0.0, 1.0))
SIGMA2 = 1.0 / 16.0
PRESET_NAMES = ("poisson-bernoulli", "lgcp-bernoulli", "bivariate", "lgcp-geostat")

# spatial Whittle-Matern (smoothness 0.5, inverse scale 1) times a constant
# temporal factor; the constant factor makes the field constant in time per
# location, which the PSD jitter (<= 1e-6) regularizes
_BENCH_COV = SeparableCovariance(WhittleMatern(SIGMA2, 0.5, 1.0), Constant(1.0))


def poisson_preset_intensity():
    """The fixed inhomogeneous test intensity 5 t exp(5 + 0.5 x) on the
    unit window, with its analytic dominating bound."""
    fn = lambda x, t: 5.0 * t * np.exp(5.0 + 0.5 * np.asarray(x)[:, 0])
    lam_max = 5.0 * math.exp(5.5)
    return IntensityField(fn=fn, window=UNIT_WINDOW, lam_max=lam_max)


def lgcp_mean(slope, var_sign=-1.0):
    """Cox-preset mean functions mu(x, y, t) = log(750) + slope (y + t)
    + var_sign * sigma2 / 2 (slope -0.5 or -1.5)."""
    def fn(x, y, t, _slope=float(slope), _sign=float(var_sign)):
        return math.log(750.0) + _slope * (np.asarray(y) + np.asarray(t)) + _sign * SIGMA2 / 2.0

    return fn


def preset_sampler(name, grf_shape=(16, 16, 16)):
    """Prebuild the Gaussian-field sampler behind an LGCP preset so repeated
    ``simulate_preset`` calls can skip the covariance factorization."""
    if name == "lgcp-bernoulli":
        return GRFSampler.build(lgcp_mean(-0.5), _BENCH_COV, grf_shape, UNIT_WINDOW)
    if name == "bivariate":
        return GRFSampler.build(lgcp_mean(-1.5), _BENCH_COV, grf_shape, UNIT_WINDOW)
    if name == "lgcp-geostat":
        return GRFSampler.build(lgcp_mean(-0.5, var_sign=+1.0), _BENCH_COV, grf_shape, UNIT_WINDOW)
    raise ValueError(f"preset {name!r} has no Gaussian-field component")


def simulate_preset(name, seed=None, grf_shape=(16, 16, 16), sampler=None):
    """Draw one realization of a named benchmark model.

    Presets
    -------
    poisson-bernoulli
        Inhomogeneous Poisson, intensity 5 t exp(5 + 0.5 x), iid two-label
        marks with success probability 0.4.
    lgcp-bernoulli
        Log-Gaussian Cox process, mean log(750) - 0.5(y+t) - sigma2/2 with
        sigma2 = 1/16, spatial Whittle-Matern (0.5, 1) covariance, constant
        temporal factor; same iid marking.
    bivariate
        Superposition of the Poisson ground process (label 1) and an
        independent LGCP with mean log(750) - 1.5(y+t) - sigma2/2 (label 2).
    lgcp-geostat
        LGCP with mean log(750) - 0.5(y+t) + sigma2/2; marks read off an
        independent unit-variance exponential-covariance Gaussian field at
        the full space-time location of each point.

    ``sampler``, if given, must come from ``preset_sampler(name, ...)`` and
    replaces the per-call factorization for the preset's Cox component.
    """
    rng = np.random.default_rng(seed)
    if name == "poisson-bernoulli":
        ground = sim_poisson(poisson_preset_intensity(), seed=rng)
        return assign_marks_iid(ground, Bernoulli(0.4), seed=rng)
    if name == "lgcp-bernoulli":
        ground = sim_lgcp(lgcp_mean(-0.5), _BENCH_COV, grf_shape, UNIT_WINDOW,
                          seed=rng, sampler=sampler)
        return assign_marks_iid(ground, Bernoulli(0.4), seed=rng)
    if name == "bivariate":
        y1 = sim_poisson(poisson_preset_intensity(), seed=rng)
        y2 = sim_lgcp(lgcp_mean(-1.5), _BENCH_COV, grf_shape, UNIT_WINDOW,
                      seed=rng, sampler=sampler)
        return superpose([y1, y2])
    if name == "lgcp-geostat":
        ground = sim_lgcp(lgcp_mean(-0.5, var_sign=+1.0), _BENCH_COV, grf_shape,
                          UNIT_WINDOW, seed=rng, sampler=sampler)
        mark_cov = SeparableCovariance(Exponential(1.0), Constant(1.0))
        return assign_marks_geostat(ground, mark_cov, seed=rng)
    raise ValueError(f"unknown preset {name!r}")
