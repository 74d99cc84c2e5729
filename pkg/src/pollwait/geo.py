"""Great-circle distance, building hulls and point membership.

Everything here works at building scale. Hulls and containment are computed
in an equirectangular projection centred on the shape, which is accurate to
well under a centimetre over a few hundred metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometry

EARTH_RADIUS_M = 6_371_000.0

# tolerance (m^2) on cross products so that points on an edge count as inside
_EDGE_EPS = 1e-6


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"invalid coordinate ({self.lat}, {self.lon})")


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres on a sphere of radius 6,371 km."""
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dphi = p2 - p1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised :func:`haversine_m` over broadcastable degree arrays."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def within_radius(center: GeoPoint, p: GeoPoint, r: float) -> bool:
    if r <= 0:
        raise ValueError("radius must be positive")
    return haversine_m(center, p) <= r


def offset_point(origin: GeoPoint, east_m: float, north_m: float) -> GeoPoint:
    """Point displaced from ``origin`` by a local east/north offset in metres."""
    lat = origin.lat + math.degrees(north_m / EARTH_RADIUS_M)
    lon = origin.lon + math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(origin.lat))))
    return GeoPoint(lat, lon)


def project(lat0: float, lon0: float, lats, lons) -> tuple[np.ndarray, np.ndarray]:
    """Local equirectangular projection (metres east, metres north) about (lat0, lon0)."""
    k = math.radians(1.0) * EARTH_RADIUS_M
    x = (np.asarray(lons, dtype=float) - lon0) * k * math.cos(math.radians(lat0))
    y = (np.asarray(lats, dtype=float) - lat0) * k
    return x, y


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@dataclass(frozen=True)
class Footprint:
    """Convex building outline, vertices in counter-clockwise order."""

    vertices: tuple[GeoPoint, ...]

    def __post_init__(self):
        verts = tuple(self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise DegenerateGeometry("footprint needs at least 3 vertices")
        for a, b in zip(verts, verts[1:] + verts[:1]):
            if a == b:
                raise DegenerateGeometry("repeated consecutive vertex")
        x, y = self.local_xy()
        n = len(verts)
        turns = [
            _cross(x[i], y[i], x[(i + 1) % n], y[(i + 1) % n], x[(i + 2) % n], y[(i + 2) % n])
            for i in range(n)
        ]
        if min(turns) < -_EDGE_EPS:
            raise DegenerateGeometry("footprint is not convex and counter-clockwise")
        if max(turns) <= _EDGE_EPS:
            raise DegenerateGeometry("footprint has zero area")

    @property
    def origin(self) -> tuple[float, float]:
        return (
            float(np.mean([v.lat for v in self.vertices])),
            float(np.mean([v.lon for v in self.vertices])),
        )

    @property
    def centroid(self) -> GeoPoint:
        return GeoPoint(*self.origin)

    def local_xy(self) -> tuple[np.ndarray, np.ndarray]:
        lat0, lon0 = self.origin
        return project(lat0, lon0, [v.lat for v in self.vertices], [v.lon for v in self.vertices])


def convex_hull(points: Sequence[GeoPoint]) -> Footprint:
    """Minimal convex polygon containing ``points`` (monotone chain).

    Collinear points along an edge are not kept as vertices. Popping uses the exact
    sign of the turn: a tolerance here would drop genuine vertices next to a nearly
    collinear neighbour.
    """
    pts = list(dict.fromkeys(points))
    if len(pts) < 3:
        raise DegenerateGeometry("need at least 3 distinct points")
    lat0 = float(np.mean([p.lat for p in pts]))
    lon0 = float(np.mean([p.lon for p in pts]))
    xs, ys = project(lat0, lon0, [p.lat for p in pts], [p.lon for p in pts])
    order = sorted(range(len(pts)), key=lambda i: (xs[i], ys[i]))

    def half(idx):
        chain: list[int] = []
        for i in idx:
            while len(chain) >= 2 and _cross(
                xs[chain[-2]], ys[chain[-2]], xs[chain[-1]], ys[chain[-1]], xs[i], ys[i]
            ) <= 0.0:
                chain.pop()
            chain.append(i)
        return chain

    lower = half(order)
    upper = half(order[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateGeometry("points are collinear")
    return Footprint(tuple(pts[i] for i in hull))


def contains_many(fp: Footprint, lats, lons) -> np.ndarray:
    """Boolean mask of points inside or on the boundary of ``fp``."""
    lat0, lon0 = fp.origin
    vx, vy = fp.local_xy()
    px, py = project(lat0, lon0, lats, lons)
    inside = np.ones(px.shape, dtype=bool)
    n = len(vx)
    for i in range(n):
        j = (i + 1) % n
        c = (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i])
        inside &= c >= -_EDGE_EPS
    return inside


def contains(fp: Footprint, p: GeoPoint) -> bool:
    return bool(contains_many(fp, np.array([p.lat]), np.array([p.lon]))[0])
