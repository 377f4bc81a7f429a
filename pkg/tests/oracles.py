"""Independent reference implementations used by the tests.

Nothing here imports the package under test.
"""

import sys

import numpy as np

sys.setrecursionlimit(20000)

N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
N8 = N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def _fill(grid, seen, r, c, value, nbrs):
    seen[r][c] = True
    h, w = len(grid), len(grid[0])
    for dr, dc in nbrs:
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and not seen[rr][cc] and grid[rr][cc] == value:
            _fill(grid, seen, rr, cc, value, nbrs)


def flood_regions(img, value, nbrs):
    """Recursive flood fill; returns list of regions as sets of pixels."""
    grid = [[bool(v) for v in row] for row in np.asarray(img)]
    h, w = len(grid), len(grid[0])
    seen = [[False] * w for _ in range(h)]
    regions = []
    for r in range(h):
        for c in range(w):
            if grid[r][c] == value and not seen[r][c]:
                before = {(i, j) for i in range(h) for j in range(w) if seen[i][j]}
                _fill(grid, seen, r, c, value, nbrs)
                after = {(i, j) for i in range(h) for j in range(w) if seen[i][j]}
                regions.append(after - before)
    return regions


def count_regions(img, value, nbrs):
    grid = [[bool(v) for v in row] for row in np.asarray(img)]
    h, w = len(grid), len(grid[0])
    seen = [[False] * w for _ in range(h)]
    n = 0
    for r in range(h):
        for c in range(w):
            if grid[r][c] == value and not seen[r][c]:
                _fill(grid, seen, r, c, value, nbrs)
                n += 1
    return n


def components(img, connectivity=8):
    return count_regions(img, True, N8 if connectivity == 8 else N4)


def holes(img, connectivity=8):
    """Background regions (complementary connectivity) off the border."""
    img = np.asarray(img, dtype=bool)
    h, w = img.shape
    # pad with background: everything connected to the pad touches the border
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = img
    nbrs = N4 if connectivity == 8 else N8
    return count_regions(padded, False, nbrs) - 1


def boundary_count(img, pixels):
    img = np.asarray(img, dtype=bool)
    h, w = img.shape
    n = 0
    for r, c in pixels:
        for dr, dc in N4:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w) or not img[rr, cc]:
                n += 1
                break
    return n


def brute_erode_square(img, radius):
    """Erosion by the set of integer offsets with norm <= radius."""
    img = np.asarray(img, dtype=bool)
    h, w = img.shape
    offs = [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1)
            if dr * dr + dc * dc <= radius * radius]
    out = np.zeros_like(img)
    for r in range(h):
        for c in range(w):
            out[r, c] = all(0 <= r + dr < h and 0 <= c + dc < w and img[r + dr, c + dc] for dr, dc in offs)
    return out


# ---------------------------------------------------------------------------
# SVM dual by accelerated projected gradient


def _project(v, y, C):
    """Euclidean projection onto {0 <= a <= C, y'a = 0}.

    a(lam) = clip(v - lam*y, 0, C) and y'a(lam) is piecewise linear and
    non-increasing in lam, so the root is found exactly between sorted
    breakpoints.
    """
    bps = np.unique(np.concatenate([v * y, (v - C) * y]))
    A = np.clip(v[None, :] - bps[:, None] * y[None, :], 0.0, C)
    h = A @ y
    k = np.searchsorted(-h, 0.0)  # first breakpoint with h <= 0
    if k == 0:
        lam = bps[0]
    elif k == len(bps):
        lam = bps[-1]
    else:
        l0, l1, h0, h1 = bps[k - 1], bps[k], h[k - 1], h[k]
        lam = l0 if h0 == h1 else l0 + (l1 - l0) * h0 / (h0 - h1)
    return np.clip(v - lam * y, 0.0, C)


def qp_dual(X, y, C, gamma, iters=20000):
    """Maximize sum(a) - 0.5 a'Qa over the SVM dual feasible set.

    Returns (alpha, objective).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    sq = (X ** 2).sum(1)
    K = np.exp(-gamma * np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0))
    Q = K * np.outer(y, y)
    L = np.linalg.eigvalsh(Q).max()
    step = 1.0 / L
    a = np.zeros(len(y))
    z = a.copy()
    t = 1.0
    for _ in range(iters):
        g = Q @ z - 1.0
        a_new = _project(z - step * g, y, C)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = a_new + (t - 1) / t_new * (a_new - a)
        a, t = a_new, t_new
    obj = a.sum() - 0.5 * a @ Q @ a
    return a, float(obj)


def qp_decision(alpha, X, y, C, gamma, Xq):
    """Decision values of the oracle solution, offset from free vectors."""
    X = np.asarray(X, dtype=float)
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))

    def k(A, B):
        sa, sb = (A ** 2).sum(1), (B ** 2).sum(1)
        return np.exp(-gamma * np.maximum(sa[:, None] + sb[None, :] - 2 * A @ B.T, 0))

    f_train = k(X, X) @ (alpha * y)
    free = (alpha > 1e-6 * C) & (alpha < C * (1 - 1e-6))
    if free.any():
        b = np.mean(y[free] - f_train[free])
    else:
        b = 0.0
    return k(Xq, X) @ (alpha * y) + b
