"""Parametric tubule cross-sections and their raster meshes.

All lengths are in mm.  The specimen occupies ``[0, 11]^2`` and tubules are
confined to the concentric region ``[0.5, 10.5]^2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from .errors import InvalidArgument

SPECIMEN = 11.0
REGION = 10.0
REGION_LO = 0.5
REGION_HI = 10.5
DEFAULT_EDGE = 0.24

SIDES_RANGE = (3, 6)
COUNT_RANGE = (1, 8)
VF_RANGE = (0.01, 0.10)

# centroid classification margin, mm; keeps masks stable under ulp-level vertex noise
_INSIDE_TOL = 1e-9


@dataclass(frozen=True)
class DesignParams:
    sides: int
    n_x: int
    n_y: int
    angle: float  # radians
    vf: float

    def __post_init__(self):
        for name in ("sides", "n_x", "n_y"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise InvalidArgument(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not SIDES_RANGE[0] <= self.sides <= SIDES_RANGE[1]:
            raise InvalidArgument(f"sides must be in [3, 6], got {self.sides}")
        for name in ("n_x", "n_y"):
            if not COUNT_RANGE[0] <= getattr(self, name) <= COUNT_RANGE[1]:
                raise InvalidArgument(f"{name} must be in [1, 8], got {getattr(self, name)}")
        if not (math.isfinite(self.angle) and 0.0 <= self.angle < 2 * math.pi):
            raise InvalidArgument(f"angle must be in [0, 2pi), got {self.angle!r}")
        if not (math.isfinite(self.vf) and VF_RANGE[0] <= self.vf <= VF_RANGE[1]):
            raise InvalidArgument(f"vf must be in [0.01, 0.10], got {self.vf!r}")
        object.__setattr__(self, "angle", float(self.angle))
        object.__setattr__(self, "vf", float(self.vf))

    @property
    def cell_size(self):
        return REGION / self.n_x, REGION / self.n_y

    @property
    def tubule_area(self):
        a, b = self.cell_size
        return self.vf * a * b

    @property
    def solid_area(self):
        """Specimen area minus the exact total tubule area, mm^2."""
        return SPECIMEN * SPECIMEN - self.n_x * self.n_y * self.tubule_area

    def as_vector(self):
        return np.array([self.sides, self.n_x, self.n_y, self.angle, self.vf], dtype=float)

    def to_dict(self):
        return {"sides": self.sides, "nx": self.n_x, "ny": self.n_y,
                "angle_deg": math.degrees(self.angle), "vf": self.vf}

    @classmethod
    def from_dict(cls, d):
        angle = math.radians(float(d["angle_deg"])) % (2 * math.pi)
        return cls(d["sides"], d["nx"], d["ny"], angle, d["vf"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Polygon:
    vertices: np.ndarray  # (n, 2), counter-clockwise

    @property
    def area(self):
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def perimeter(self):
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def translated(self, offset):
        return Polygon(self.vertices + np.asarray(offset, dtype=float))

    def contains(self, points, tol=_INSIDE_TOL):
        """Strict interior test for a convex CCW polygon; ``points`` is (m, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        elen = np.hypot(e[:, 0], e[:, 1])
        inside = np.ones(len(pts), dtype=bool)
        for k in range(len(v)):
            cross = e[k, 0] * (pts[:, 1] - v[k, 1]) - e[k, 1] * (pts[:, 0] - v[k, 0])
            inside &= cross > tol * elen[k]
        return inside


@dataclass(frozen=True)
class Rejection:
    """Typed outcome for designs whose tubules overlap or leave the region."""
    reason: str
    pair: tuple = ()


def regular_polygon(sides, area, angle, center=(0.0, 0.0)) -> Polygon:
    """Regular ``sides``-gon of exact ``area`` with a vertex at polar angle ``angle``.

    The vertex set depends on ``angle`` only modulo ``2*pi/sides``, so rotating
    by one symmetry step reproduces the same coordinates bit for bit; the
    list is then rolled so vertex 0 is the one nearest ``angle``.
    """
    vals = (sides, area, angle, center[0], center[1])
    if not all(math.isfinite(float(v)) for v in vals):
        raise InvalidArgument("regular_polygon arguments must be finite")
    if int(sides) != sides or sides < 3:
        raise InvalidArgument(f"sides must be an integer >= 3, got {sides!r}")
    if area <= 0:
        raise InvalidArgument(f"area must be positive, got {area!r}")
    sides = int(sides)
    step = 2 * math.pi / sides
    base = math.fmod(angle, step)
    if base < 0:
        base += step
    R = math.sqrt(2.0 * area / (sides * math.sin(step)))
    theta = base + step * np.arange(sides)
    verts = np.column_stack((center[0] + R * np.cos(theta), center[1] + R * np.sin(theta)))
    # roll so that vertex 0 sits at ``angle`` (mod 2pi)
    shift = int(round((angle - base) / step)) % sides
    return Polygon(np.roll(verts, -shift, axis=0))


def circumradius(sides, area):
    return math.sqrt(2.0 * area / (sides * math.sin(2 * math.pi / sides)))


def tubule_centers(n_x, n_y):
    if not (COUNT_RANGE[0] <= n_x <= COUNT_RANGE[1] and COUNT_RANGE[0] <= n_y <= COUNT_RANGE[1]):
        raise InvalidArgument(f"tubule counts must be in [1, 8], got ({n_x}, {n_y})")
    a, b = REGION / n_x, REGION / n_y
    return [(REGION_LO + (i + 0.5) * a, REGION_LO + (j + 0.5) * b)
            for j in range(n_y) for i in range(n_x)]


def convex_disjoint(p: Polygon, q: Polygon) -> bool:
    """Separating-axis test; touching closures count as *not* disjoint."""
    for poly in (p, q):
        v = poly.vertices
        e = np.roll(v, -1, axis=0) - v
        normals = np.column_stack((e[:, 1], -e[:, 0]))  # outward for CCW
        for k in range(len(v)):
            n = normals[k]
            pa = p.vertices @ n
            qa = q.vertices @ n
            if pa.max() < qa.min() or qa.max() < pa.min():
                return True
    return False


def build_design(params: DesignParams) -> Union[List[Polygon], Rejection]:
    """Polygons for every tubule, or a :class:`Rejection`.

    All tubules are translates of one polygon on a regular grid, so overlap
    is decided per distinct grid offset rather than per pair.
    """
    a, b = params.cell_size
    area = params.tubule_area
    proto = regular_polygon(params.sides, area, params.angle, (0.0, 0.0))
    centers = tubule_centers(params.n_x, params.n_y)

    v = proto.vertices
    c0x, c0y = centers[0]
    c1x, c1y = centers[-1]
    if (c0x + v[:, 0].min() < REGION_LO or c1x + v[:, 0].max() > REGION_HI
            or c0y + v[:, 1].min() < REGION_LO or c1y + v[:, 1].max() > REGION_HI):
        return Rejection("tubule leaves the 10x10 mm region")

    reach = 2.0 * circumradius(params.sides, area) * (1 + 1e-12)
    for i in range(params.n_x):
        for j in range(-(params.n_y - 1), params.n_y):
            if i == 0 and j <= 0:
                continue
            d = (i * a, j * b)
            if math.hypot(*d) > reach:
                continue
            if not convex_disjoint(proto, proto.translated(d)):
                return Rejection("tubules intersect or touch", pair=(i, j))

    return [proto.translated(c) for c in centers]


def is_valid(params: DesignParams) -> bool:
    return not isinstance(build_design(params), Rejection)


@dataclass(frozen=True)
class RasterMesh:
    elems_x: int
    elems_y: int
    edge: float  # mm
    active: np.ndarray  # (elems_y, elems_x) bool, row 0 at the bottom

    @property
    def n_active(self):
        return int(self.active.sum())

    @property
    def void_area(self):
        return float((~self.active).sum()) * self.edge ** 2

    @property
    def porosity(self):
        return float((~self.active).mean())

    def has_load_path(self):
        return bool(self.active.any(axis=1).all())

    def mirrored(self):
        """Mirror image about the vertical centreline."""
        return RasterMesh(self.elems_x, self.elems_y, self.edge, self.active[:, ::-1].copy())

    def to_ascii(self):
        return "\n".join("".join("1" if a else "0" for a in row) for row in self.active[::-1]) + "\n"

    @classmethod
    def from_ascii(cls, text, edge):
        rows = [r for r in text.strip().splitlines()]
        active = np.array([[c == "1" for c in r] for r in rows[::-1]], dtype=bool)
        return cls(active.shape[1], active.shape[0], float(edge), active)


def rasterize(polygons: Sequence[Polygon], edge=DEFAULT_EDGE, specimen=SPECIMEN) -> RasterMesh:
    """Structured mask: an element is void iff its centroid is strictly inside a tubule."""
    if not (math.isfinite(edge) and edge > 0):
        raise InvalidArgument(f"edge must be positive, got {edge!r}")
    n = max(1, int(round(specimen / edge)))
    h = specimen / n
    active = np.ones((n, n), dtype=bool)
    centers = (np.arange(n) + 0.5) * h
    for poly in polygons:
        v = poly.vertices
        i0 = max(0, int(math.floor(v[:, 0].min() / h)))
        i1 = min(n, int(math.ceil(v[:, 0].max() / h)) + 1)
        j0 = max(0, int(math.floor(v[:, 1].min() / h)))
        j1 = min(n, int(math.ceil(v[:, 1].max() / h)) + 1)
        if i0 >= i1 or j0 >= j1:
            continue
        X, Y = np.meshgrid(centers[i0:i1], centers[j0:j1])
        inside = poly.contains(np.column_stack((X.ravel(), Y.ravel()))).reshape(X.shape)
        active[j0:j1, i0:i1] &= ~inside
    return RasterMesh(n, n, h, active)


def mesh_for_design(params: DesignParams, edge=DEFAULT_EDGE) -> Union[RasterMesh, Rejection]:
    polys = build_design(params)
    if isinstance(polys, Rejection):
        return polys
    mesh = rasterize(polys, edge)
    if not mesh.has_load_path():
        return Rejection("an element row is fully void")
    return mesh


def solid_mesh(edge=DEFAULT_EDGE) -> RasterMesh:
    return rasterize([], edge)
