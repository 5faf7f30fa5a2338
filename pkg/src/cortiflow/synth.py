"""Synthetic genus-0 test surfaces: icospheres, ellipsoids and bumpy spheres.

All generators are deterministic: the bumpy sphere consumes a single seed and
its radial offset is normalized on a fixed lat/long probe grid, so meshes of
different subdivision levels sample the same continuous surface.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError
from .mesh import TriangleMesh

__all__ = [
    "icosahedron",
    "subdivide",
    "icosphere_mesh",
    "ellipsoid_mesh",
    "bumpy_sphere_mesh",
    "bumpy_offset_function",
    "gen_synthetic",
]


def icosahedron() -> TriangleMesh:
    """Unit icosahedron with outward CCW faces."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    # enforce outward orientation regardless of the table above
    tri = verts[faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centroids = tri.mean(axis=1)
    flip = (normals * centroids).sum(axis=1) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriangleMesh(verts, faces)


def subdivide(mesh: TriangleMesh) -> TriangleMesh:
    """Split every face into 4 by edge midpoints (midpoints not projected)."""
    v, f = mesh.vertices, mesh.faces
    half = f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    half_sorted = np.sort(half, axis=1)
    edges, inverse = np.unique(half_sorted, axis=0, return_inverse=True)
    mid = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])
    mid_idx = (len(v) + inverse.reshape(-1, 3)).astype(np.int64)
    m01, m12, m20 = mid_idx[:, 0], mid_idx[:, 1], mid_idx[:, 2]
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([a, m01, m20], axis=1),
            np.stack([b, m12, m01], axis=1),
            np.stack([c, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return TriangleMesh(np.concatenate([v, mid]), new_faces)


def icosphere_mesh(level: int, radius: float = 1.0) -> TriangleMesh:
    """Icosahedron subdivided `level` times, vertices scaled to `radius`.

    Vertex count is 10 * 4**level + 2.
    """
    if level < 0:
        raise ArgumentError("level must be >= 0")
    if radius <= 0:
        raise ArgumentError("radius must be > 0")
    mesh = icosahedron()
    for _ in range(level):
        mesh = subdivide(mesh)
        v = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
        mesh = mesh.with_vertices(v)
    return mesh.with_vertices(mesh.vertices * radius)


def ellipsoid_mesh(level: int, axes) -> TriangleMesh:
    axes = np.asarray(axes, dtype=np.float64)
    if axes.shape != (3,) or (axes <= 0).any():
        raise ArgumentError(f"axes must be 3 positive values, got {axes}")
    sphere = icosphere_mesh(level)
    return sphere.with_vertices(sphere.vertices * axes)


def bumpy_offset_function(amplitude: float, lobes: int, seed: int):
    """Band-limited radial offset r(theta, phi) built from a low-order
    sinusoidal basis over latitude/longitude, normalized so its supremum on a
    dense probe grid equals `amplitude`. Returns a callable on unit vectors."""
    if lobes < 1:
        raise ArgumentError("lobes must be >= 1")
    if amplitude < 0:
        raise ArgumentError("amplitude must be >= 0")
    rng = np.random.default_rng(seed)
    terms = []
    for l in range(1, lobes + 1):
        for m in range(0, l + 1):
            a, b = rng.normal(size=2) / l
            psi = rng.uniform(0.0, 2.0 * np.pi)
            terms.append((l, m, a, b, psi))

    def raw(theta, phi):
        s = np.zeros(np.broadcast(theta, phi).shape, dtype=np.float64)
        for l, m, a, b, psi in terms:
            # sin(theta)**m keeps the field continuous at the poles
            s += (
                np.sin(theta) ** m
                * np.cos(l * theta + psi)
                * (a * np.cos(m * phi) + b * np.sin(m * phi))
            )
        return s

    # tessellation-independent normalization on a fixed probe grid
    th = np.linspace(0.0, np.pi, 256)
    ph = np.linspace(0.0, 2.0 * np.pi, 512, endpoint=False)
    peak = np.abs(raw(th[:, None], ph[None, :])).max()
    scale = 0.0 if peak == 0.0 else amplitude / peak

    def offset(unit_points: np.ndarray) -> np.ndarray:
        p = np.asarray(unit_points, dtype=np.float64)
        theta = np.arccos(np.clip(p[..., 2], -1.0, 1.0))
        phi = np.arctan2(p[..., 1], p[..., 0])
        return scale * raw(theta, phi)

    return offset


def bumpy_sphere_mesh(
    level: int,
    radius: float = 1.0,
    amplitude: float = 0.1,
    lobes: int = 3,
    seed: int = 0,
) -> TriangleMesh:
    """Unit-sphere mesh perturbed radially by a seeded band-limited offset."""
    if amplitude >= radius:
        raise ArgumentError(
            f"bump amplitude ({amplitude}) must be smaller than radius ({radius})"
        )
    sphere = icosphere_mesh(level)
    unit = sphere.vertices
    offset = bumpy_offset_function(amplitude, lobes, seed)(unit)
    return sphere.with_vertices(unit * (radius + offset)[:, None])


def gen_synthetic(kind: str, params: dict, seed: int = 0):
    """Dispatch used by the CLI. Returns (mesh, inner_mesh_or_None).

    The optional companion inner surface is the main surface scaled about the
    origin by params["inner_scale"].
    """
    params = dict(params)
    inner_scale = params.pop("inner_scale", None)
    level = int(params.pop("level", 3))
    if kind == "sphere":
        radius = float(params.pop("radius", 1.0))
        _reject_unknown(kind, params)
        mesh = icosphere_mesh(level, radius)
    elif kind == "ellipsoid":
        axes = params.pop("axes", (1.0, 0.8, 1.2))
        _reject_unknown(kind, params)
        mesh = ellipsoid_mesh(level, axes)
    elif kind == "bumpy_sphere":
        radius = float(params.pop("radius", 1.0))
        amplitude = float(params.pop("amplitude", 0.1))
        lobes = int(params.pop("lobes", 3))
        _reject_unknown(kind, params)
        mesh = bumpy_sphere_mesh(level, radius, amplitude, lobes, seed)
    else:
        raise ArgumentError(f"unknown synthetic kind {kind!r}")
    inner = None
    if inner_scale is not None:
        inner_scale = float(inner_scale)
        if inner_scale <= 0:
            raise ArgumentError("inner_scale must be > 0")
        inner = mesh.with_vertices(mesh.vertices * inner_scale)
    return mesh, inner


def _reject_unknown(kind: str, params: dict) -> None:
    if params:
        raise ArgumentError(f"unknown parameters for {kind}: {sorted(params)}")
