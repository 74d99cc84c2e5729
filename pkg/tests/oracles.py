"""Independent reference implementations used only by the tests.

Each oracle takes a deliberately different route from the library code
(dense algebra, brute-force loops, extended precision) so agreement is
evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np

R_EARTH = 6_371_000.0


def distance_cosines(lat1, lon1, lat2, lon2, dps=50) -> float:
    """Great-circle distance via the spherical law of cosines at high precision."""
    with mpmath.workdps(dps):
        p1, p2 = mpmath.radians(lat1), mpmath.radians(lat2)
        dl = mpmath.radians(lon2) - mpmath.radians(lon1)
        c = mpmath.sin(p1) * mpmath.sin(p2) + mpmath.cos(p1) * mpmath.cos(p2) * mpmath.cos(dl)
        c = max(min(c, 1), -1)
        return float(R_EARTH * mpmath.acos(c))


def local_xy(lat0, lon0, lats, lons):
    k = math.pi / 180 * R_EARTH
    x = (np.asarray(lons) - lon0) * k * math.cos(math.radians(lat0))
    y = (np.asarray(lats) - lat0) * k
    return x, y


def ray_cast(px, py, vx, vy) -> bool:
    """Even-odd ray casting; points on an edge count as inside."""
    n = len(vx)
    inside = False
    for i in range(n):
        x1, y1, x2, y2 = vx[i], vy[i], vx[(i + 1) % n], vy[(i + 1) % n]
        # on-segment check
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if abs(cross) <= 1e-9 and min(x1, x2) - 1e-9 <= px <= max(x1, x2) + 1e-9 and min(y1, y2) - 1e-9 <= py <= max(y1, y2) + 1e-9:
            return True
        if (y1 > py) != (y2 > py):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xint:
                inside = not inside
    return inside


def extreme_points(x, y) -> set[int]:
    """Indices of points not inside (or on) any triangle of three other points."""
    n = len(x)
    out = set()
    for p in range(n):
        others = [i for i in range(n) if i != p]
        covered = False
        for a, b, c in itertools.combinations(others, 3):
            d1 = (x[b] - x[a]) * (y[p] - y[a]) - (y[b] - y[a]) * (x[p] - x[a])
            d2 = (x[c] - x[b]) * (y[p] - y[b]) - (y[c] - y[b]) * (x[p] - x[b])
            d3 = (x[a] - x[c]) * (y[p] - y[c]) - (y[a] - y[c]) * (x[p] - x[c])
            area = abs((x[b] - x[a]) * (y[c] - y[a]) - (y[b] - y[a]) * (x[c] - x[a]))
            if area < 1e-9:
                continue
            if (d1 >= 0 and d2 >= 0 and d3 >= 0) or (d1 <= 0 and d2 <= 0 and d3 <= 0):
                covered = True
                break
        if not covered:
            out.add(p)
    return out


def segment_spells(rows, places, radius_m):
    """Brute-force run detection.

    ``rows`` is a list of (device, t, lat, lon) sorted by device then t;
    ``places`` a list of (place_id, lat, lon, offset_h). Returns a set of
    (device, place_id, t_first_in, t_last_in, t_out_before, t_out_after)
    with None for missing brackets.
    """
    out = set()
    by_dev = {}
    for r in rows:
        by_dev.setdefault(r[0], []).append(r)
    for dev, pts in by_dev.items():
        for pid, plat, plon, off in places:
            day = [int((p[1] + off * 3600) // 86400) for p in pts]
            inside = [distance_cosines(plat, plon, p[2], p[3]) <= radius_m for p in pts]
            i = 0
            while i < len(pts):
                if not inside[i]:
                    i += 1
                    continue
                j = i
                while j + 1 < len(pts) and inside[j + 1] and day[j + 1] == day[i]:
                    j += 1
                before = pts[i - 1][1] if i > 0 and day[i - 1] == day[i] else None
                after = pts[j + 1][1] if j + 1 < len(pts) and day[j + 1] == day[i] else None
                out.add((dev, pid, pts[i][1], pts[j][1], before, after))
                i = j + 1
    return out


def dummy_ols(y, X, fe_lists, clusters, correction="CR1"):
    """Dense least squares with explicit indicator columns and an explicit sandwich.

    Returns (coef, se) for the columns of X only.
    """
    n = len(y)
    blocks = [X]
    if fe_lists:
        for k, fe in enumerate(fe_lists):
            levels = sorted(set(fe))
            D = np.array([[1.0 if v == lev else 0.0 for lev in levels] for v in fe])
            blocks.append(D if k == 0 else D[:, 1:])
    else:
        blocks.append(np.ones((n, 1)))
    A = np.column_stack(blocks)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    rank = np.linalg.matrix_rank(A)
    u = y - A @ coef
    AtA_inv = np.linalg.pinv(A.T @ A)
    meat = np.zeros((A.shape[1], A.shape[1]))
    for g in sorted(set(clusters)):
        idx = [i for i, c in enumerate(clusters) if c == g]
        s = A[idx].T @ u[idx]
        meat += np.outer(s, s)
    G = len(set(clusters))
    c = G / (G - 1) * (n - 1) / (n - rank) if correction == "CR1" else 1.0
    V = c * AtA_inv @ meat @ AtA_inv
    k = X.shape[1]
    return coef[:k], np.sqrt(np.diag(V)[:k])


def dense_fe_ols(y, X, fe_lists, clusters):
    """Indicator-column least squares via Householder QR with a CR1 sandwich built block by block.

    Vectorised counterpart of dummy_ols for larger fuzz sets; assumes the indicator
    design (first factor full, later factors minus a reference level) has full rank.
    Returns (coef, se) for the columns of X only.
    """
    y = np.asarray(y, float)
    n = len(y)
    blocks = [np.asarray(X, float)]
    if fe_lists:
        for k, fe in enumerate(fe_lists):
            _, inv = np.unique(np.asarray(fe, dtype=object).astype(str), return_inverse=True)
            D = (inv[:, None] == np.arange(inv.max() + 1)[None, :]).astype(float)
            blocks.append(D if k == 0 else D[:, 1:])
    else:
        blocks.append(np.ones((n, 1)))
    A = np.column_stack(blocks)
    Q, R = np.linalg.qr(A)
    coef = np.linalg.solve(R, Q.T @ y)
    u = y - A @ coef
    Rinv = np.linalg.solve(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T
    _, g = np.unique(np.asarray(clusters, dtype=object).astype(str), return_inverse=True)
    G = g.max() + 1
    C = (g[:, None] == np.arange(G)[None, :]).astype(float)
    S = C.T @ (A * u[:, None])
    meat = S.T @ S
    c = G / (G - 1) * (n - 1) / (n - A.shape[1])
    V = c * bread @ meat @ bread
    k = blocks[0].shape[1]
    return coef[:k], np.sqrt(np.diag(V)[:k])


def eb_iterate(raw, se, tol=1e-30, dps=60, max_iter=100000):
    """Method-of-moments fixed point at extended precision."""
    with mpmath.workdps(dps):
        r = [mpmath.mpf(x) for x in raw]
        v = [mpmath.mpf(s) ** 2 for s in se]
        mu = sum(r) / len(r)
        tau2 = mpmath.mpf(0)
        for _ in range(max_iter):
            w = [1 / (tau2 + vi) for vi in v]
            mu_new = sum(wi * ri for wi, ri in zip(w, r)) / sum(w)
            t = sum(wi * ((ri - mu_new) ** 2 - vi) for wi, ri, vi in zip(w, r, v)) / sum(w)
            tau2_new = t if t > 0 else mpmath.mpf(0)
            step = abs(mu_new - mu) + abs(tau2_new - tau2)
            mu, tau2 = mu_new, tau2_new
            if step < tol:
                break
        adj = [mu + tau2 / (tau2 + vi) * (ri - mu) for ri, vi in zip(r, v)]
        return float(mu), float(tau2), [float(a) for a in adj]


def pearson(a, b) -> float:
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def decile_places(values: dict) -> tuple[set, set]:
    """Bottom/top decile places by sorting and slicing, ties at the cut included."""
    items = sorted(values.items(), key=lambda kv: kv[1])
    P = len(items)
    k = -(-P // 10)
    lo_cut = items[k - 1][1]
    hi_cut = items[P - k][1]
    return {p for p, v in items if v <= lo_cut}, {p for p, v in items if v >= hi_cut}


def hash_join(left_rows, right_rows, keys):
    index = {}
    for r in right_rows:
        index.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for l in left_rows:
        for r in index.get(tuple(l[k] for k in keys), []):
            out.append({**l, **r})
    return out
