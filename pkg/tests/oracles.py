"""Reference implementations used as test oracles.

Everything here is written as directly as possible from the estimator
definitions — plain Python loops over ordered pairs, one lag cell at a
time — with none of the difference-array, sorting, or indexing machinery
of the library code. Slow on purpose; tests keep N small.
"""

import math

import numpy as np


def margins(p):
    """Distance of each point to the window boundary: (spatial, temporal)."""
    lo, hi = p.window.spatial_bounds()
    ms = np.min(np.minimum(p.x - lo, hi - p.x), axis=1)
    tlo, thi = p.window.temporal
    mt = np.minimum(p.t - tlo, thi - p.t)
    return ms, mt


def k_cells_oracle(p, r_grid, t_grid, lam, *, lam_ground=None, c_mask=None,
                   d_mask=None, nu_c=1.0, nu_d=1.0, scenario="S1",
                   erosion="per-cell", pair_ok=None):
    """K-surface by direct evaluation of the definition, cell by cell.
    ``pair_ok``, if given, is an (n, n) boolean matrix of extra ordered-pair
    eligibility (e.g. direction membership)."""
    n = p.n
    lam = np.asarray(lam, dtype=float)
    lam_g = lam if lam_ground is None else np.asarray(lam_ground, dtype=float)
    c_mask = np.ones(n, dtype=bool) if c_mask is None else np.asarray(c_mask, dtype=bool)
    d_mask = np.ones(n, dtype=bool) if d_mask is None else np.asarray(d_mask, dtype=bool)
    ms, mt = margins(p)
    ds = np.sqrt(np.sum((p.x[:, None, :] - p.x[None, :, :]) ** 2, axis=2))
    du = np.abs(p.t[:, None] - p.t[None, :])
    lo, hi = p.window.spatial_bounds()
    sides = hi - lo
    t_len = p.window.temporal_length
    r_max, t_max = float(r_grid[-1]), float(t_grid[-1])

    out = np.zeros((r_grid.size, t_grid.size))
    for a, r in enumerate(r_grid):
        for b, t in enumerate(t_grid):
            if erosion == "per-cell":
                elig = (ms >= r) & (mt >= t)
                ell = float(np.prod(sides - 2.0 * r)) * (t_len - 2.0 * t)
            else:
                elig = (ms >= r_max) & (mt >= t_max)
                ell = float(np.prod(sides - 2.0 * r_max)) * (t_len - 2.0 * t_max)
            num = 0.0
            for i in range(n):
                if not (elig[i] and c_mask[i]):
                    continue
                for j in range(n):
                    if j == i or not d_mask[j]:
                        continue
                    if pair_ok is not None and not pair_ok[i, j]:
                        continue
                    if ds[i, j] <= r and du[i, j] <= t:
                        num += 1.0 / (lam[i] * lam[j])
            if num == 0.0:
                out[a, b] = 0.0
                continue
            s_c = float(np.sum(1.0 / lam[elig & c_mask]))
            s_d = float(np.sum(1.0 / lam[elig & d_mask]))
            g = float(np.sum(1.0 / lam_g[elig]))
            if scenario == "S1":
                denom = ell * nu_c * nu_d
            elif scenario == "S2":
                denom = s_c * s_d / ell
            elif scenario == "S3":
                denom = nu_c * nu_d * g
            else:
                denom = s_c * s_d / g
            out[a, b] = 0.0 if denom == 0.0 else num / denom
    return out


def measure_oracle(p, contains, r_e, t_e, lam, *, c_mask=None, d_mask=None,
                   nu_c=1.0, nu_d=1.0):
    """Reduced-moment-measure estimate for one structuring set, where
    ``contains(dx, dt)`` decides membership of the signed lag."""
    n = p.n
    lam = np.asarray(lam, dtype=float)
    c_mask = np.ones(n, dtype=bool) if c_mask is None else np.asarray(c_mask, dtype=bool)
    d_mask = np.ones(n, dtype=bool) if d_mask is None else np.asarray(d_mask, dtype=bool)
    ms, mt = margins(p)
    lo, hi = p.window.spatial_bounds()
    ell = float(np.prod((hi - lo) - 2.0 * r_e)) * (p.window.temporal_length - 2.0 * t_e)
    num = 0.0
    for i in range(n):
        if not (c_mask[i] and ms[i] >= r_e and mt[i] >= t_e):
            continue
        for j in range(n):
            if j == i or not d_mask[j]:
                continue
            if contains(p.x[j] - p.x[i], p.t[j] - p.t[i]):
                num += 1.0 / (lam[i] * lam[j])
    return num / (ell * nu_c * nu_d)


def voronoi_masses_oracle(p, n_space, n_time, chunk=200_000):
    """Ground-tessellation cell masses by midpoint labeling on an
    independent grid: nearest generator under max(spatial Euclid, |dt|),
    ties to the lowest index."""
    lo, hi = p.window.spatial_bounds()
    axes = [lo[a] + (np.arange(n_space) + 0.5) * (hi[a] - lo[a]) / n_space
            for a in range(p.dim)]
    tlo, thi = p.window.temporal
    t_axis = tlo + (np.arange(n_time) + 0.5) * (thi - tlo) / n_time
    mesh = np.meshgrid(*axes, indexing="ij")
    space_nodes = np.column_stack([m.ravel() for m in mesh])
    vol = p.window.volume / (n_space ** p.dim * n_time)
    masses = np.zeros(p.n)
    # one time slice at a time keeps the node array small at high resolution
    for tv in t_axis:
        dt = np.abs(tv - p.t)[None, :]
        for s in range(0, space_nodes.shape[0], chunk):
            blk = space_nodes[s:s + chunk]
            d2 = np.sum((blk[:, None, :] - p.x[None, :, :]) ** 2, axis=2)
            d = np.maximum(np.sqrt(d2), dt)
            lab = np.argmin(d, axis=1)
            masses += np.bincount(lab, minlength=p.n) * vol
    return masses


def marked_masses_oracle(p, n_space, n_time, n_mark, chunk=100_000):
    """Marked-tessellation cell masses on an independent grid under the
    full metric: max-combination for interval marks, additive for labels.
    Interval reference must be Lebesgue; labels use unit counting weights."""
    labelled = p.mark_space.is_labelled
    lo, hi = p.window.spatial_bounds()
    axes = [lo[a] + (np.arange(n_space) + 0.5) * (hi[a] - lo[a]) / n_space
            for a in range(p.dim)]
    tlo, thi = p.window.temporal
    axes.append(tlo + (np.arange(n_time) + 0.5) * (thi - tlo) / n_time)
    if labelled:
        mark_nodes = np.arange(1, p.mark_space.k + 1, dtype=float)
        mark_w = np.ones(mark_nodes.size)
    else:
        mlo, mhi = p.mark_space.lo, p.mark_space.hi
        mark_nodes = mlo + (np.arange(n_mark) + 0.5) * (mhi - mlo) / n_mark
        mark_w = np.full(n_mark, (mhi - mlo) / n_mark)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    vol = p.window.volume / (n_space ** p.dim * n_time)
    masses = np.zeros(p.n)
    for s in range(0, nodes.shape[0], chunk):
        blk = nodes[s:s + chunk]
        d2 = np.sum((blk[:, None, :-1] - p.x[None, :, :]) ** 2, axis=2)
        base = np.maximum(np.sqrt(d2), np.abs(blk[:, None, -1] - p.t[None, :]))
        for z, w in zip(mark_nodes, mark_w):
            dm = np.abs(z - p.marks)[None, :]
            d = base + dm if labelled else np.maximum(base, dm)
            lab = np.argmin(d, axis=1)
            masses += np.bincount(lab, minlength=p.n) * (vol * w)
    return masses


def mc_volume(indicator, r, t, d, n_samples, seed):
    """Monte-Carlo volume of a lag set inside the bounding box
    [-r, r]^d x [-t, t]; ``indicator(dx, dt)`` maps sample arrays
    ((n, d), (n,)) to a boolean array."""
    rng = np.random.default_rng(seed)
    dx = rng.uniform(-r, r, size=(n_samples, d))
    dt = rng.uniform(-t, t, size=n_samples)
    box = (2.0 * r) ** d * (2.0 * t)
    return box * float(np.mean(indicator(dx, dt)))


def wedge_contains(dx, phi, psi):
    """Double-wedge direction membership via plain angle arithmetic:
    the angle of dx or of -dx lies in [phi, psi] (closed)."""
    ang = math.atan2(dx[1], dx[0])
    for a in (ang, ang + math.pi if ang <= 0 else ang - math.pi):
        if phi - 1e-15 <= a <= psi + 1e-15:
            return True
    return False
