"""Independent reference computations used by the test suite."""
from __future__ import annotations

import itertools

import numpy as np


def lp_vertex_enumeration(c, A, b, lower, upper, tol=1e-9):
    """Optimal objective of a boxed LP by enumerating every basic solution.

    Each variable is at its lower bound, at its upper bound or free; a pattern
    with ``f`` free variables is completed by every choice of ``f`` active
    rows. Returns ``inf`` when no vertex is feasible.
    """
    c, A, b = np.asarray(c, float), np.asarray(A, float), np.asarray(b, float)
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    n, m = c.size, b.size
    best = np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        free = np.flatnonzero(pattern == 2)
        fixed = np.flatnonzero(pattern != 2)
        x_fixed = np.where(pattern[fixed] == 0, lower[fixed], upper[fixed])
        f = free.size
        if f > m:
            continue
        if f == 0:
            subsets = [()]
        else:
            subsets = list(itertools.combinations(range(m), f))
        S = np.array(subsets, dtype=int).reshape(len(subsets), f)
        rhs = b - A[:, fixed] @ x_fixed  # (m,)
        if f == 0:
            xs = np.tile(x_fixed, (1, 1))
            full = np.empty((1, n))
            full[:, fixed] = xs
        else:
            mats = A[:, free][S]  # (k, f, f)
            vecs = rhs[S]  # (k, f)
            det = np.linalg.det(mats)
            ok = np.abs(det) > 1e-10
            if not np.any(ok):
                continue
            sol = np.linalg.solve(mats[ok], vecs[ok][..., None])[..., 0]
            full = np.empty((sol.shape[0], n))
            full[:, free] = sol
            full[:, fixed] = x_fixed
        feas = np.all(full >= lower - tol, axis=1) & np.all(full <= upper + tol, axis=1)
        if m:
            feas &= np.all(full @ A.T <= b + tol, axis=1)
        if np.any(feas):
            best = min(best, float(np.min(full[feas] @ c)))
    return best


def circle_max_min(points, angles=1_000_000):
    """Brute-force covering radius of 2-D unit vectors over a dense angle grid."""
    theta = np.linspace(0.0, 2.0 * np.pi, angles, endpoint=False)
    pts = np.asarray(points, float)
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    best = np.full(theta.size, np.inf)
    for a in ang:
        gap = np.abs(np.angle(np.exp(1j * (theta - a))))
        best = np.minimum(best, 2.0 * np.sin(gap / 2.0))
    return float(best.max())


def random_boxed_lp(rng, max_vars=8, max_rows=20):
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    A = rng.standard_normal((m, n))
    x0 = rng.uniform(-1, 1, n)
    # about half the instances are feasible by construction
    slack = rng.uniform(-0.5, 1.0, m)
    b = A @ x0 + slack
    c = rng.standard_normal(n)
    lower = -rng.uniform(0.5, 3.0, n)
    upper = rng.uniform(0.5, 3.0, n)
    return c, A, b, lower, upper
