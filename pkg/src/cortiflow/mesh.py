"""Indexed triangle meshes, connectivity queries and smoothing operators.

Meshes are immutable after construction: deforming operations return new
meshes that share the connectivity caches of their parent, so repeated
vertex-only updates never rebuild edge tables.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import (
    ArgumentError,
    DegenerateGeometryError,
    NumericError,
    StructuralError,
)

__all__ = [
    "TriangleMesh",
    "VertexScalarField",
    "euler_characteristic",
    "face_normals_areas",
    "edge_lengths",
    "surface_area",
    "vertex_normals",
    "taubin_smooth",
    "laplacian_smooth_vertex_vectors",
]


class _Connectivity:
    """Derived connectivity tables for one face array, built lazily and
    shared between all meshes with identical faces."""

    def __init__(self, faces: np.ndarray, n_vertices: int):
        self.faces = faces
        self.n_vertices = n_vertices

    @cached_property
    def _edge_tables(self):
        faces = self.faces
        half = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        half.sort(axis=1)
        # lexicographic ordering by (min index, max index) is what np.unique returns
        edges, inverse = np.unique(half, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        counts = np.bincount(inverse, minlength=len(edges))
        if counts.max(initial=0) > 2:
            bad = int(np.argmax(counts > 2))
            raise StructuralError(
                f"edge {tuple(edges[bad])} is shared by {counts[bad]} faces (non-manifold)"
            )
        face_of_half = np.repeat(np.arange(len(faces), dtype=np.int64), 3)
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)])[:-1]
        edge_faces = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_faces[:, 0] = face_of_half[order][starts]
        two = counts == 2
        edge_faces[two, 1] = face_of_half[order][starts[two] + 1]
        return edges, edge_faces, counts

    @property
    def edges(self) -> np.ndarray:
        return self._edge_tables[0]

    @property
    def edge_faces(self) -> np.ndarray:
        return self._edge_tables[1]

    @property
    def edge_face_counts(self) -> np.ndarray:
        return self._edge_tables[2]

    @cached_property
    def vertex_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_vertices, dtype=np.int64)
        np.add.at(deg, self.edges.reshape(-1), 1)
        return deg

    @cached_property
    def averaging_matrix(self) -> sparse.csr_matrix:
        """Row-stochastic vertex adjacency: (A v)_i = mean of v over neighbors of i."""
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        deg = np.maximum(self.vertex_degrees, 1)
        data = 1.0 / deg[rows]
        n = self.n_vertices
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


class TriangleMesh:
    """Triangle surface with vertex positions in world millimeters.

    Faces are counter-clockwise when viewed from outside (outward normals).
    Vertex and face arrays are read-only; use :meth:`with_vertices` to build
    a deformed copy that shares connectivity.
    """

    def __init__(self, vertices, faces, _conn: _Connectivity | None = None):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise StructuralError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise StructuralError(f"faces must be (m, 3), got {f.shape}")
        if not np.isfinite(v).all():
            raise NumericError("non-finite vertex coordinates")
        if _conn is None:
            if f.size and (f.min() < 0 or f.max() >= len(v)):
                raise StructuralError("face index out of range")
            if f.size and (
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            ).any():
                bad = int(
                    np.argmax(
                        (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
                    )
                )
                raise StructuralError(f"face {bad} has repeated vertex indices")
            _conn = _Connectivity(f, len(v))
        v.flags.writeable = False
        f.flags.writeable = False
        self.vertices = v
        self.faces = f
        self._conn = _conn

    # -- basic counts ------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, lexicographic by (min index, max index)."""
        return self._conn.edges

    @property
    def n_edges(self) -> int:
        return len(self._conn.edges)

    @property
    def edge_faces(self) -> np.ndarray:
        """(E, 2) incident faces per edge; -1 marks a missing (boundary) side."""
        return self._conn.edge_faces

    @property
    def vertex_degrees(self) -> np.ndarray:
        return self._conn.vertex_degrees

    @property
    def averaging_matrix(self) -> sparse.csr_matrix:
        return self._conn.averaging_matrix

    def is_closed(self) -> bool:
        return bool((self._conn.edge_face_counts == 2).all())

    def require_closed(self, what: str = "operation") -> None:
        counts = self._conn.edge_face_counts
        if (counts != 2).any():
            bad = int(np.argmax(counts != 2))
            raise StructuralError(
                f"{what} requires a closed mesh, but edge {tuple(self.edges[bad])} "
                f"borders {counts[bad]} face(s)"
            )

    def with_vertices(self, vertices) -> "TriangleMesh":
        """New mesh with the same connectivity and replaced vertex positions."""
        return TriangleMesh(vertices, self.faces, _conn=self._conn)

    def same_connectivity(self, other: "TriangleMesh") -> bool:
        return self.faces.shape == other.faces.shape and bool(
            (self.faces == other.faces).all()
        )

    def __repr__(self) -> str:
        return f"TriangleMesh(V={self.n_vertices}, F={self.n_faces})"


class VertexScalarField:
    """One scalar per mesh vertex (depth and thickness in mm, curvature in 1/mm)."""

    def __init__(self, mesh: TriangleMesh, values):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (mesh.n_vertices,):
            raise ArgumentError(
                f"expected {mesh.n_vertices} values, got shape {values.shape}"
            )
        if not np.isfinite(values).all():
            raise NumericError("non-finite scalar values")
        values.flags.writeable = False
        self.mesh = mesh
        self.values = values

    def __len__(self) -> int:
        return len(self.values)


# -- queries ---------------------------------------------------------------


def euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F (2 for closed genus-0 surfaces)."""
    return mesh.n_vertices - mesh.n_edges + mesh.n_faces


def face_normals_areas(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Unit outward face normals and face areas (mm^2).

    Raises DegenerateGeometryError naming the first zero-area face.
    """
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norms = np.linalg.norm(cross, axis=1)
    if (norms == 0.0).any():
        bad = int(np.argmax(norms == 0.0))
        raise DegenerateGeometryError(f"face {bad} has zero area")
    return cross / norms[:, None], 0.5 * norms


def edge_lengths(mesh: TriangleMesh) -> np.ndarray:
    """Euclidean length of each unique edge, in edge-table order."""
    e = mesh.edges
    d = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    return np.sqrt((d * d).sum(axis=1))


def surface_area(mesh: TriangleMesh) -> float:
    return float(face_normals_areas(mesh)[1].sum())


def vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length.

    Vertices not referenced by any face keep a zero normal.
    """
    v = mesh.vertices
    f = mesh.faces
    # cross product = 2 * area * unit normal, so summing it directly is the
    # area weighting
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    acc = np.zeros_like(v)
    fidx = f.reshape(-1)
    for c in range(3):
        acc[:, c] = np.bincount(
            fidx, weights=np.repeat(cross[:, c], 3), minlength=len(v)
        )
    norms = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(acc)
    nz = norms > 0
    out[nz] = acc[nz] / norms[nz, None]
    return out


# -- smoothing ---------------------------------------------------------------


def taubin_smooth(
    mesh: TriangleMesh,
    lambda_step: float = 0.33,
    mu_step: float = -0.34,
    iterations: int = 10,
) -> TriangleMesh:
    """Shrink-compensating Taubin smoothing with uniform Laplacian weights.

    Requires lambda_step > 0 > mu_step and |mu_step| > lambda_step.
    Connectivity is unchanged; 0 iterations returns the mesh as-is.
    """
    if not (lambda_step > 0.0 > mu_step and abs(mu_step) > lambda_step):
        raise ArgumentError(
            f"need lambda > 0 > mu with |mu| > lambda, got ({lambda_step}, {mu_step})"
        )
    if iterations < 0:
        raise ArgumentError("iterations must be >= 0")
    if iterations == 0:
        return mesh
    avg = mesh.averaging_matrix
    v = mesh.vertices.copy()
    for _ in range(iterations):
        v += lambda_step * (avg @ v - v)
        v += mu_step * (avg @ v - v)
    if not np.isfinite(v).all():
        raise NumericError("Taubin smoothing produced non-finite vertices")
    return mesh.with_vertices(v)


def laplacian_smooth_vertex_vectors(
    mesh: TriangleMesh, vectors: np.ndarray, iterations: int
) -> np.ndarray:
    """Repeatedly replace each vertex value with the unweighted mean of its
    neighbors' values. Works on (n, k) arrays of per-vertex vectors."""
    vec = np.asarray(vectors, dtype=np.float64)
    if vec.shape[0] != mesh.n_vertices:
        raise ArgumentError(
            f"expected {mesh.n_vertices} per-vertex vectors, got {vec.shape[0]}"
        )
    if iterations < 0:
        raise ArgumentError("iterations must be >= 0")
    avg = mesh.averaging_matrix
    out = vec.copy()
    for _ in range(iterations):
        out = avg @ out
    return out
