import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mstpp.geometry import Window
from mstpp.pattern import ContinuousMarks, LabelMarks, pattern_from_arrays

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


UNIT = Window(spatial=((0.0, 1.0), (0.0, 1.0)), temporal=(0.0, 1.0))


def uniform_pattern(n, seed, window=UNIT, mark_space=None, marks="interval"):
    """Uniform points in the window; marks uniform on the mark space
    (interval marks by default, labels when marks='labels', none when
    marks=None)."""
    rng = np.random.default_rng(seed)
    lo, hi = window.spatial_bounds()
    x = lo + rng.random((n, len(lo))) * (hi - lo)
    tlo, thi = window.temporal
    t = tlo + rng.random(n) * (thi - tlo)
    if marks is None:
        return pattern_from_arrays(x, t, None, window, None)
    if marks == "labels":
        ms = mark_space if mark_space is not None else LabelMarks(k=2)
        m = rng.integers(1, ms.k + 1, size=n).astype(float)
    else:
        ms = mark_space if mark_space is not None else ContinuousMarks(0.0, 1.0)
        m = ms.lo + rng.random(n) * (ms.hi - ms.lo)
    return pattern_from_arrays(x, t, m, window, ms)


@pytest.fixture
def unit_window():
    return UNIT


@pytest.fixture
def small_marked():
    """20 uniformly placed points with interval marks (seeded)."""
    return uniform_pattern(20, seed=101)


@pytest.fixture
def small_labelled():
    """24 uniformly placed points with labels {1, 2} (seeded)."""
    return uniform_pattern(24, seed=202, marks="labels")
