"""
The marked point-pattern data model: mark spaces and their reference
measures, mark sets, patterns, ingestion, and the basic transformers
(rescaling, mark restriction, thinning, mark permutation).

A pattern stores its points as arrays (x: (N, d), t: (N,), marks: (N,)),
is immutable after construction, and always satisfies simpleness: no two
points share an identical (location, mark). Unmarked ("ground") patterns
carry ``marks=None`` and ``mark_space=None``; the simulators produce these
and the marking operations upgrade them.
"""

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import SpaceTimePoint, Window

__all__ = [
    "ContinuousMarks",
    "LabelMarks",
    "MarkInterval",
    "LabelSet",
    "MarkedPoint",
    "MarkedPattern",
    "pattern_from_arrays",
    "load_catalog",
    "save_catalog",
    "rescale",
    "restrict_marks",
    "project_ground",
    "thin",
    "permute_marks",
]

_REFERENCES = ("lebesgue", "normalized", "empirical")


@dataclass(frozen=True)
class ContinuousMarks:
    """Continuous mark space: an interval [lo, hi] with a reference measure.

    Parameters
    ----------
    lo, hi : float
        Interval bounds, lo < hi.
    reference : {"lebesgue", "normalized", "empirical"}
        Reference measure on the interval: plain length, length normalized
        to a probability measure, or the empirical mark distribution
        (atoms of weight 1/N at the observed marks; measure queries then
        need the observed marks).
    """

    lo: float
    hi: float
    reference: str = "lebesgue"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("mark interval requires lo < hi")
        if self.reference not in _REFERENCES:
            raise ValueError(f"unknown reference measure {self.reference!r}")

    is_labelled = False

    def contains_mark(self, m):
        m = np.asarray(m, dtype=float)
        return bool(np.all((m >= self.lo) & (m <= self.hi)))

    def mark_mask(self, marks):
        marks = np.asarray(marks, dtype=float)
        return (marks >= self.lo) & (marks <= self.hi)

    def nu(self, mark_set, marks=None):
        """Reference-measure mass of a mark set; empirical reference needs
        the observed marks."""
        lo = max(self.lo, mark_set.lo)
        hi = min(self.hi, mark_set.hi)
        if self.reference == "empirical":
            if marks is None:
                raise ValueError("empirical reference needs the observed marks")
            return float(np.mean(mark_set.mask(np.asarray(marks, dtype=float))))
        length = max(0.0, hi - lo)
        if self.reference == "normalized":
            return length / (self.hi - self.lo)
        return length

    def nu_total(self, marks=None):
        if self.reference == "lebesgue":
            return self.hi - self.lo
        return 1.0


@dataclass(frozen=True)
class LabelMarks:
    """Finite label space {1, ..., k} with positive per-label weights
    (the counting measure when weights are omitted)."""

    k: int
    weights: tuple = None

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("label space requires k >= 2")
        w = self.weights
        if w is None:
            w = tuple(1.0 for _ in range(self.k))
        else:
            w = tuple(float(v) for v in w)
            if len(w) != self.k:
                raise ValueError("need one weight per label")
            if any(v <= 0 for v in w):
                raise ValueError("label weights must be positive")
        object.__setattr__(self, "weights", w)

    is_labelled = True

    def contains_mark(self, m):
        m = np.asarray(m, dtype=float)
        return bool(np.all((m == np.round(m)) & (m >= 1) & (m <= self.k)))

    def mark_mask(self, marks):
        marks = np.asarray(marks, dtype=float)
        return (marks == np.round(marks)) & (marks >= 1) & (marks <= self.k)

    def nu(self, mark_set, marks=None):
        return float(sum(self.weights[i - 1] for i in sorted(mark_set.labels) if 1 <= i <= self.k))

    def nu_total(self, marks=None):
        return float(sum(self.weights))


@dataclass(frozen=True)
class MarkInterval:
    """Mark Borel set for continuous marks: an interval with configurable
    end-point closure (closure only matters for membership, not for the
    Lebesgue mass)."""

    lo: float
    hi: float
    closed_lo: bool = True
    closed_hi: bool = True

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("mark interval requires lo <= hi")

    def mask(self, marks):
        marks = np.asarray(marks, dtype=float)
        left = marks >= self.lo if self.closed_lo else marks > self.lo
        right = marks <= self.hi if self.closed_hi else marks < self.hi
        return left & right

    def contains(self, m):
        return bool(self.mask(np.asarray([m]))[0])


@dataclass(frozen=True)
class LabelSet:
    """Mark set for label spaces: a subset of {1, ..., k}."""

    labels: frozenset

    def __init__(self, labels):
        object.__setattr__(self, "labels", frozenset(int(v) for v in labels))
        if not self.labels:
            raise ValueError("label set must be nonempty")

    def mask(self, marks):
        marks = np.asarray(marks)
        out = np.zeros(marks.shape, dtype=bool)
        for lab in self.labels:
            out |= marks == lab
        return out

    def contains(self, m):
        return int(m) in self.labels


def full_mark_set(mark_space):
    """The mark set covering the whole mark space."""
    if mark_space.is_labelled:
        return LabelSet(range(1, mark_space.k + 1))
    return MarkInterval(mark_space.lo, mark_space.hi)


@dataclass(frozen=True)
class MarkedPoint:
    loc: SpaceTimePoint
    mark: float


@dataclass(frozen=True)
class MarkedPattern:
    """A finite marked (or ground) spatio-temporal point pattern in a window.

    Attributes
    ----------
    x : ndarray (N, d)
    t : ndarray (N,)
    marks : ndarray (N,) or None
        None for a ground (unmarked) pattern.
    window : Window
    mark_space : ContinuousMarks | LabelMarks | None
    """

    x: np.ndarray
    t: np.ndarray
    marks: object
    window: Window
    mark_space: object

    def __post_init__(self):
        # own private copies: the arrays are frozen below and must never
        # alias caller-owned memory
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(0, self.window.dim) if x.size == 0 else np.atleast_2d(x)
        x = np.array(x, dtype=float, order="C")
        t = np.array(np.asarray(self.t, dtype=float).ravel(), dtype=float)
        if x.shape[0] != t.shape[0]:
            raise ValueError("x and t must have one row per point")
        if x.size and not np.all(np.isfinite(x)):
            raise ValueError("coordinates must be finite")
        if t.size and not np.all(np.isfinite(t)):
            raise ValueError("times must be finite")
        if x.shape[1] != self.window.dim:
            raise ValueError("pattern and window dimension mismatch")
        if x.shape[0] and not np.all(self.window.contains(x, t)):
            raise ValueError("all points must lie inside the window")
        marks = self.marks
        if marks is not None:
            if self.mark_space is None:
                raise ValueError("marks need a mark space")
            marks = np.array(np.asarray(marks, dtype=float).ravel(), dtype=float)
            if marks.shape[0] != t.shape[0]:
                raise ValueError("need one mark per point")
            if marks.size and not np.all(self.mark_space.mark_mask(marks)):
                raise ValueError("mark outside mark space")
        elif self.mark_space is not None:
            raise ValueError("mark space given but no marks")
        rows = np.column_stack([x, t] if marks is None else [x, t, marks])
        if rows.shape[0] > 1 and np.unique(rows, axis=0).shape[0] != rows.shape[0]:
            raise ValueError("pattern is not simple: duplicate (location, mark)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "marks", marks)
        self.x.setflags(write=False)
        self.t.setflags(write=False)
        if marks is not None:
            self.marks.setflags(write=False)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def is_marked(self):
        return self.marks is not None

    def points(self):
        """The points as MarkedPoint values (mark NaN for ground patterns)."""
        out = []
        for i in range(self.n):
            loc = SpaceTimePoint(tuple(self.x[i]), float(self.t[i]))
            mark = float(self.marks[i]) if self.is_marked else math.nan
            out.append(MarkedPoint(loc, mark))
        return out

    def nu(self, mark_set):
        """Reference-measure mass of a mark set under this pattern's space
        (empirical references read this pattern's marks)."""
        if not self.is_marked:
            raise ValueError("ground pattern has no mark space")
        return self.mark_space.nu(mark_set, marks=self.marks)

    def nu_total(self):
        if not self.is_marked:
            raise ValueError("ground pattern has no mark space")
        return self.mark_space.nu_total(marks=self.marks)

    def with_marks(self, marks, mark_space):
        return MarkedPattern(self.x, self.t, marks, self.window, mark_space)


def pattern_from_arrays(x, t, marks=None, window=None, mark_space=None):
    """Build a validated pattern from arrays. ``window`` is required."""
    if window is None:
        raise ValueError("window is required")
    return MarkedPattern(x=x, t=t, marks=marks, window=window, mark_space=mark_space)


def load_catalog(path, window, mark_space, dim=2):
    """Read a catalog CSV into a validated pattern.

    The header must be ``x,y,t,mark`` (d = 2) or ``x1,...,xd,t,mark``.
    Label marks are integers 1..k. Rows outside the window are dropped with
    a count report (warning); duplicate (location, mark) rows collapse to
    one with a warning so the pattern stays simple.

    Raises
    ------
    ValueError
        On a malformed row (with its line number) or an empty result.
    """
    expected = ["x", "y", "t", "mark"] if dim == 2 else [f"x{i + 1}" for i in range(dim)] + ["t", "mark"]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ValueError(f"expected header {','.join(expected)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise ValueError(f"line {lineno}: expected {dim + 2} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise ValueError("catalog is empty")
    data = np.asarray(rows, dtype=float)
    x, t, marks = data[:, :dim], data[:, dim], data[:, dim + 1]
    inside = window.contains(x, t) & mark_space.mark_mask(marks)
    n_dropped = int(np.sum(~inside))
    if n_dropped:
        warnings.warn(f"{n_dropped} dropped (outside window or mark space)", stacklevel=2)
    x, t, marks = x[inside], t[inside], marks[inside]
    rows_in = np.column_stack([x, t, marks])
    _, keep = np.unique(rows_in, axis=0, return_index=True)
    if keep.shape[0] != rows_in.shape[0]:
        warnings.warn(
            f"{rows_in.shape[0] - keep.shape[0]} duplicate rows collapsed", stacklevel=2
        )
        keep = np.sort(keep)
        x, t, marks = x[keep], t[keep], marks[keep]
    if x.shape[0] == 0:
        raise ValueError("no rows remain inside the window")
    return MarkedPattern(x=x, t=t, marks=marks, window=window, mark_space=mark_space)


def save_catalog(p, path):
    """Write a marked pattern as a catalog CSV (the inverse of
    ``load_catalog``); floats are written with full round-trip precision."""
    if not p.is_marked:
        raise ValueError("catalogs carry a mark column; pattern is unmarked")
    header = ["x", "y", "t", "mark"] if p.dim == 2 else [
        f"x{i + 1}" for i in range(p.dim)
    ] + ["t", "mark"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(p.n):
            row = [repr(float(v)) for v in p.x[i]]
            row.append(repr(float(p.t[i])))
            row.append(repr(float(p.marks[i])))
            writer.writerow(row)


def rescale(p, beta_s, beta_t):
    """Scale spatial coordinates by beta_s and times by beta_t (window
    included); marks are untouched."""
    if beta_s <= 0 or beta_t <= 0:
        raise ValueError("scale factors must be positive")
    window = Window(
        spatial=tuple((lo * beta_s, hi * beta_s) for lo, hi in p.window.spatial),
        temporal=(p.window.temporal[0] * beta_t, p.window.temporal[1] * beta_t),
    )
    x = p.x * beta_s
    t = p.t * beta_t
    # rescaling can push boundary points a ulp outside the scaled window
    lo, hi = window.spatial_bounds()
    x = np.clip(x, lo, hi)
    t = np.clip(t, window.temporal[0], window.temporal[1])
    return MarkedPattern(x=x, t=t, marks=p.marks, window=window, mark_space=p.mark_space)


def restrict_marks(p, mark_set):
    """Subsequence of points with mark in the set, original order kept
    (the restriction variant: marks are retained)."""
    if not p.is_marked:
        raise ValueError("ground pattern has no marks to restrict")
    if p.nu(mark_set) <= 0:
        raise ValueError("mark set has zero reference mass")
    keep = mark_set.mask(p.marks)
    return MarkedPattern(
        x=p.x[keep], t=p.t[keep], marks=p.marks[keep], window=p.window, mark_space=p.mark_space
    )


def project_ground(p, mark_set=None):
    """Projection variant: drop marks (optionally restricting to a mark set
    first), returning a ground pattern."""
    if mark_set is not None:
        p = restrict_marks(p, mark_set)
    return MarkedPattern(x=p.x, t=p.t, marks=None, window=p.window, mark_space=None)


def thin(p, retention, seed=None):
    """Independent thinning: each point kept with probability ``retention``,
    reproducibly under ``seed``."""
    if not 0 < retention < 1:
        raise ValueError("retention must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    keep = rng.random(p.n) < retention
    marks = p.marks[keep] if p.is_marked else None
    return MarkedPattern(
        x=p.x[keep], t=p.t[keep], marks=marks, window=p.window, mark_space=p.mark_space
    )


def permute_marks(p, seed=None):
    """Uniform random permutation of the marks (without replacement);
    locations untouched."""
    if not p.is_marked:
        raise ValueError("ground pattern has no marks to permute")
    if p.n < 2:
        raise ValueError("mark permutation needs at least two points")
    rng = np.random.default_rng(seed)
    marks = p.marks[rng.permutation(p.n)]
    return MarkedPattern(
        x=p.x, t=p.t, marks=marks, window=p.window, mark_space=p.mark_space
    )
