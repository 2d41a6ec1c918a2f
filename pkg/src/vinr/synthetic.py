"""Analytic SDF shapes and tessellated fixtures used as exact ground truth.

Every shape exposes value(points) -> signed distances, so shapes plug
directly into grid evaluation, blending and metrics as SDF sources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, PointCloud, TriangleMesh

__all__ = [
    "Sphere",
    "Capsule",
    "Torus",
    "Offset",
    "UnionList",
    "analytic_sdf",
    "sample_analytic_surface",
    "nested_wall_fixture",
    "bifurcation_fixture",
    "icosphere",
    "capsule_mesh",
    "parse_shape",
]


def _pts(p) -> tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=np.float64)
    single = arr.ndim == 1
    return np.atleast_2d(arr), single


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("sphere radius must be positive")

    def value(self, p):
        q, single = _pts(p)
        d = np.linalg.norm(q - np.asarray(self.center), axis=1) - self.radius
        return float(d[0]) if single else d


@dataclass(frozen=True)
class Capsule:
    """Segment a-b dilated by radius r (a tube with hemispherical caps)."""

    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("capsule radius must be positive")

    def value(self, p):
        q, single = _pts(p)
        a = np.asarray(self.a, dtype=np.float64)
        ab = np.asarray(self.b, dtype=np.float64) - a
        denom = float(ab @ ab)
        if denom == 0:
            t = np.zeros(len(q))
        else:
            t = np.clip((q - a) @ ab / denom, 0.0, 1.0)
        d = np.linalg.norm(q - (a + t[:, None] * ab), axis=1) - self.radius
        return float(d[0]) if single else d


@dataclass(frozen=True)
class Torus:
    """Torus around the z axis through `center`: major radius R, tube r."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    major: float = 0.5
    minor: float = 0.1

    def __post_init__(self):
        if self.major <= 0 or self.minor <= 0:
            raise GeometryError("torus radii must be positive")

    def value(self, p):
        q, single = _pts(p)
        rel = q - np.asarray(self.center)
        ring = np.hypot(np.hypot(rel[:, 0], rel[:, 1]) - self.major, rel[:, 2])
        d = ring - self.minor
        return float(d[0]) if single else d


@dataclass(frozen=True)
class Offset:
    """Dilation by delta: the SDF shifts down by exactly delta."""

    shape: object
    delta: float

    def value(self, p):
        return self.shape.value(p) - self.delta


@dataclass(frozen=True)
class UnionList:
    """min-combination of component SDFs. Exact signed distance outside the
    union; a lower bound (not exact) in overlapping interiors."""

    shapes: tuple

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        if len(self.shapes) == 0:
            raise GeometryError("union of zero shapes")

    def value(self, p):
        q, single = _pts(p)
        d = np.min(np.stack([s.value(q) for s in self.shapes]), axis=0)
        return float(d[0]) if single else d


def analytic_sdf(shape, p):
    """Signed distance of an analytic shape at p ((3,) or (N, 3))."""
    return shape.value(p)


# ---------------------------------------------------------------------------
# surface sampling


def _sample_sphere(shape: Sphere, n, rng):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(shape.center) + shape.radius * v


def _sample_capsule(shape: Capsule, n, rng):
    a = np.asarray(shape.a, dtype=np.float64)
    b = np.asarray(shape.b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    r = shape.radius
    area_cyl = 2 * np.pi * r * length
    area_caps = 4 * np.pi * r * r  # two hemispheres
    u = rng.random(n)
    on_cyl = u < area_cyl / (area_cyl + area_caps)

    if length > 0:
        ez = axis / length
    else:
        ez = np.array([0.0, 0.0, 1.0])
    tmp = np.array([1.0, 0.0, 0.0]) if abs(ez[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    ex = np.cross(tmp, ez)
    ex /= np.linalg.norm(ex)
    ey = np.cross(ez, ex)

    pts = np.empty((n, 3))
    # cylinder part
    m = int(on_cyl.sum())
    t = rng.random(m)
    phi = rng.random(m) * 2 * np.pi
    pts[on_cyl] = (
        a
        + t[:, None] * axis
        + r * (np.cos(phi)[:, None] * ex + np.sin(phi)[:, None] * ey)
    )
    # caps: uniform sphere directions, assigned to the matching end
    k = n - m
    v = rng.normal(size=(k, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    toward_b = v @ ez > 0
    centers = np.where(toward_b[:, None], b, a)
    pts[~on_cyl] = centers + r * v
    return pts


def _sample_torus(shape: Torus, n, rng):
    # area element is (R + r cos v) dv du: rejection-sample the tube angle
    out = np.empty((n, 3))
    filled = 0
    R, r = shape.major, shape.minor
    while filled < n:
        m = 2 * (n - filled) + 16
        u = rng.random(m) * 2 * np.pi
        v = rng.random(m) * 2 * np.pi
        accept = rng.random(m) * (R + r) <= R + r * np.cos(v)
        u, v = u[accept], v[accept]
        take = min(len(u), n - filled)
        u, v = u[:take], v[:take]
        ring = R + r * np.cos(v)
        pts = np.stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)], axis=1)
        out[filled : filled + take] = np.asarray(shape.center) + pts
        filled += take
    return out


def sample_analytic_surface(shape, n: int, seed: int) -> PointCloud:
    """n approximately area-uniform samples on the shape's surface.

    Spheres/capsules/tori use closed-form parameterizations; offsets sample
    the dilated primitive; unions sample components area-proportionally and
    reject points swallowed by another component.
    """
    rng = np.random.default_rng(seed)
    return PointCloud(_sample_shape(shape, n, rng))


def _sample_shape(shape, n, rng) -> np.ndarray:
    if n == 0:
        return np.empty((0, 3))
    if isinstance(shape, Sphere):
        return _sample_sphere(shape, n, rng)
    if isinstance(shape, Capsule):
        return _sample_capsule(shape, n, rng)
    if isinstance(shape, Torus):
        return _sample_torus(shape, n, rng)
    if isinstance(shape, Offset):
        return _sample_shape(_dilated(shape), n, rng)
    if isinstance(shape, UnionList):
        out = np.empty((0, 3))
        for attempt in range(64):
            need = n - len(out)
            if need <= 0:
                break
            batch = np.concatenate(
                [_sample_shape(s, need + 8, rng) for s in shape.shapes]
            )
            keep = np.abs(shape.value(batch)) < 1e-9
            batch = batch[keep]
            rng.shuffle(batch)
            out = np.concatenate([out, batch])
        if len(out) < n:
            raise GeometryError("rejection sampling of union surface failed")
        return out[:n]
    raise GeometryError(f"cannot sample surface of {type(shape).__name__}")


def _dilated(shape: Offset):
    inner = shape.shape
    if isinstance(inner, Sphere):
        return Sphere(inner.center, inner.radius + shape.delta)
    if isinstance(inner, Capsule):
        return Capsule(inner.a, inner.b, inner.radius + shape.delta)
    if isinstance(inner, Torus):
        return Torus(inner.center, inner.major, inner.minor + shape.delta)
    raise GeometryError("offset sampling supported for primitives only")


# ---------------------------------------------------------------------------
# fixtures


def nested_wall_fixture(r_lumen: float, wall1: float, wall2: float):
    """Concentric spheres modeling lumen / inner wall / outer wall,
    innermost first. Their SDFs satisfy outer <= inner <= lumen everywhere."""
    if r_lumen <= 0 or wall1 <= 0 or wall2 <= 0:
        raise GeometryError("radii and wall offsets must be positive")
    return (
        Sphere(radius=r_lumen),
        Sphere(radius=r_lumen + wall1),
        Sphere(radius=r_lumen + wall1 + wall2),
    )


def bifurcation_fixture(
    trunk_a=(0.0, 0.0, -0.8),
    junction=(0.0, 0.0, 0.0),
    branch_b1=(0.55, 0.0, 0.7),
    branch_b2=(-0.55, 0.0, 0.7),
    trunk_radius=0.22,
    branch_radius=0.15,
):
    """Y-shaped union of three capsules sharing a junction point. Returns
    (union, components)."""
    parts = (
        Capsule(trunk_a, junction, trunk_radius),
        Capsule(junction, branch_b1, branch_radius),
        Capsule(junction, branch_b2, branch_radius),
    )
    return UnionList(parts), parts


# ---------------------------------------------------------------------------
# tessellations (for mesh-based oracles and the fixtures CLI)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron with all vertices on the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = new_faces
    v = np.asarray(center) + radius * np.array(verts)
    return TriangleMesh(v, np.array(faces, dtype=np.int64))


def capsule_mesh(a, b, radius: float, segments: int = 24, rings: int = 12) -> TriangleMesh:
    """Closed lat/long tessellation of a capsule, poles along the a-b axis."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    ez = axis / length if length > 0 else np.array([0.0, 0.0, 1.0])
    tmp = np.array([1.0, 0.0, 0.0]) if abs(ez[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    ex = np.cross(tmp, ez)
    ex /= np.linalg.norm(ex)
    ey = np.cross(ez, ex)

    # stack of latitude rings: lower hemisphere around a, upper around b
    rows = []
    for i in range(rings + 1):  # theta from -pi/2 (south) to 0
        th = -np.pi / 2 + (np.pi / 2) * i / rings
        rows.append((radius * np.cos(th), a + radius * np.sin(th) * ez))
    for i in range(rings + 1):  # theta from 0 to +pi/2 (north)
        th = (np.pi / 2) * i / rings
        rows.append((radius * np.cos(th), b + radius * np.sin(th) * ez))

    verts = [a - radius * ez]  # south pole
    ring_start = []
    for rad, centre in rows[1:-1]:
        ring_start.append(len(verts))
        for s in range(segments):
            phi = 2 * np.pi * s / segments
            verts.append(centre + rad * (np.cos(phi) * ex + np.sin(phi) * ey))
    north = len(verts)
    verts.append(b + radius * ez)

    faces = []
    first = ring_start[0]
    for s in range(segments):
        faces.append((0, first + s, first + (s + 1) % segments))
    for r in range(len(ring_start) - 1):
        lo, hi = ring_start[r], ring_start[r + 1]
        for s in range(segments):
            s2 = (s + 1) % segments
            faces.append((lo + s, hi + s, hi + s2))
            faces.append((lo + s, hi + s2, lo + s2))
    last = ring_start[-1]
    for s in range(segments):
        faces.append((north, last + (s + 1) % segments, last + s))
    # the loops above wind toward the interior; flip for outward normals
    tris = np.array(faces, dtype=np.int64)[:, [0, 2, 1]]
    return TriangleMesh(np.array(verts), tris)


def parse_shape(spec: str):
    """Shape spec mini-language for the CLI.

    sphere[:r[,cx,cy,cz]] | capsule:ax,ay,az,bx,by,bz,r | torus:R,r |
    nested[:r,w1,w2] | bifurcation
    """
    name, _, rest = spec.partition(":")
    args = [float(v) for v in rest.split(",")] if rest else []
    if name == "sphere":
        r = args[0] if args else 1.0
        c = tuple(args[1:4]) if len(args) >= 4 else (0.0, 0.0, 0.0)
        return Sphere(center=c, radius=r)
    if name == "capsule":
        if len(args) != 7:
            raise GeometryError("capsule spec needs ax,ay,az,bx,by,bz,r")
        return Capsule(tuple(args[0:3]), tuple(args[3:6]), args[6])
    if name == "torus":
        if len(args) != 2:
            raise GeometryError("torus spec needs R,r")
        return Torus(major=args[0], minor=args[1])
    if name == "nested":
        r, w1, w2 = args if args else (0.3, 0.2, 0.2)
        return nested_wall_fixture(r, w1, w2)
    if name == "bifurcation":
        return bifurcation_fixture()[0]
    raise GeometryError(f"unknown shape spec {spec!r}")
