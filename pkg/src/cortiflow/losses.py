"""Surface-fitting losses: bidirectional Chamfer distance, edge-length and
normal-consistency regularizers, and their analytic gradients with respect
to vertex positions.

Nearest neighbors are found with a k-d tree but re-verified against exact
squared distances with ties broken by lowest index, so accelerated results
are bit-identical to a brute-force double loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError
from .mesh import TriangleMesh

__all__ = [
    "LossWeights",
    "nearest_neighbors",
    "chamfer_distance",
    "chamfer_with_grad",
    "edge_loss",
    "edge_loss_with_grad",
    "normal_consistency_loss",
    "normal_consistency_with_grad",
    "total_loss",
    "total_loss_with_vertex_grad",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_edge: float = 0.3
    lambda_nc: float = 3.0

    def __post_init__(self):
        if self.lambda_edge < 0 or self.lambda_nc < 0:
            raise ArgumentError("loss weights must be >= 0")


def nearest_neighbors(query: np.ndarray, ref: np.ndarray):
    """Exact nearest neighbor in `ref` for each query point.

    Returns (indices, squared distances). Squared distances are computed as
    ((q - r) ** 2).sum(-1) so they match a numpy brute-force double loop
    bit-for-bit, and ties pick the lowest reference index.
    """
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if query.ndim != 2 or query.shape[1] != 3 or len(query) == 0:
        raise ArgumentError("query must be a non-empty (n, 3) point set")
    if ref.ndim != 2 or ref.shape[1] != 3 or len(ref) == 0:
        raise ArgumentError("reference must be a non-empty (m, 3) point set")
    tree = cKDTree(ref)
    dist, idx = tree.query(query, k=1)
    # re-verify within an inflated ball so near-ties cannot change the result
    # between the tree's arithmetic and ours
    radius = dist * (1.0 + 1e-9) + 1e-12
    candidates = tree.query_ball_point(query, radius)
    out_idx = np.empty(len(query), dtype=np.int64)
    out_d2 = np.empty(len(query), dtype=np.float64)
    for i, cand in enumerate(candidates):
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        if cand.size == 0:
            cand = np.array([idx[i]], dtype=np.int64)
        d2 = ((query[i] - ref[cand]) ** 2).sum(-1)
        j = int(np.argmin(d2))  # argmin returns the first (lowest index) tie
        out_idx[i] = cand[j]
        out_d2[i] = d2[j]
    return out_idx, out_d2


def chamfer_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Bidirectional Chamfer distance (mm^2):
    mean squared nearest distance in both directions, each weighted 1/2."""
    _, d2_xy = nearest_neighbors(x, y)
    _, d2_yx = nearest_neighbors(y, x)
    return 0.5 * float(d2_xy.mean()) + 0.5 * float(d2_yx.mean())


def chamfer_with_grad(x: np.ndarray, y: np.ndarray):
    """Chamfer distance and its gradient with respect to x, holding the
    nearest-neighbor matching fixed (piecewise-smooth subgradient)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    idx_xy, d2_xy = nearest_neighbors(x, y)
    idx_yx, d2_yx = nearest_neighbors(y, x)
    value = 0.5 * float(d2_xy.mean()) + 0.5 * float(d2_yx.mean())
    grad = (x - y[idx_xy]) / len(x)
    diff = x[idx_yx] - y
    for c in range(3):
        grad[:, c] += np.bincount(idx_yx, weights=diff[:, c], minlength=len(x)) / len(y)
    return value, grad


def edge_loss(mesh: TriangleMesh) -> float:
    """Mean squared edge length (mm^2)."""
    e = mesh.edges
    d = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    return float((d * d).sum(axis=1).mean())


def edge_loss_with_grad(mesh: TriangleMesh):
    e = mesh.edges
    v = mesh.vertices
    d = v[e[:, 0]] - v[e[:, 1]]
    value = float((d * d).sum(axis=1).mean())
    grad = np.zeros_like(v)
    coeff = 2.0 / len(e)
    for c in range(3):
        grad[:, c] = np.bincount(e[:, 0], weights=coeff * d[:, c], minlength=len(v))
        grad[:, c] -= np.bincount(e[:, 1], weights=coeff * d[:, c], minlength=len(v))
    return value, grad


def _face_cross(mesh: TriangleMesh):
    v, f = mesh.vertices, mesh.faces
    return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])


def normal_consistency_loss(mesh: TriangleMesh) -> float:
    """1 - mean dot product of unit normals across adjacent face pairs."""
    mesh.require_closed("normal consistency loss")
    cross = _face_cross(mesh)
    normals = cross / np.linalg.norm(cross, axis=1)[:, None]
    ef = mesh.edge_faces
    dots = (normals[ef[:, 0]] * normals[ef[:, 1]]).sum(axis=1)
    return 1.0 - float(dots.mean())


def normal_consistency_with_grad(mesh: TriangleMesh):
    mesh.require_closed("normal consistency loss")
    v, f = mesh.vertices, mesh.faces
    cross = _face_cross(mesh)
    norms = np.linalg.norm(cross, axis=1)
    normals = cross / norms[:, None]
    ef = mesh.edge_faces
    dots = (normals[ef[:, 0]] * normals[ef[:, 1]]).sum(axis=1)
    value = 1.0 - float(dots.mean())

    # d value / d n_i = -(1/E) * sum over adjacent faces j of n_j
    g_n = np.zeros_like(normals)
    coeff = -1.0 / len(ef)
    for a, b in ((0, 1), (1, 0)):
        contrib = coeff * normals[ef[:, b]]
        for c in range(3):
            g_n[:, c] += np.bincount(
                ef[:, a], weights=contrib[:, c], minlength=len(f)
            )

    # chain through the normalization: n = c/|c|
    g_cross = (g_n - normals * (normals * g_n).sum(axis=1)[:, None]) / norms[:, None]

    # chain through c = (v1-v0) x (v2-v0):
    # dc/dv0^T g = g x (v2-v1), dc/dv1^T g = g x (v0-v2), dc/dv2^T g = g x (v1-v0)
    e0 = v[f[:, 2]] - v[f[:, 1]]
    e1 = v[f[:, 0]] - v[f[:, 2]]
    e2 = v[f[:, 1]] - v[f[:, 0]]
    grad = np.zeros_like(v)
    for corner, edge in ((0, e0), (1, e1), (2, e2)):
        contrib = np.cross(g_cross, edge)
        for c in range(3):
            grad[:, c] += np.bincount(
                f[:, corner], weights=contrib[:, c], minlength=len(v)
            )
    return value, grad


def total_loss(mesh: TriangleMesh, target_points: np.ndarray, weights: LossWeights):
    """Chamfer(vertices, target) + lambda_edge * edge + lambda_nc * nc.

    Returns (total, breakdown dict).
    """
    cd = chamfer_distance(mesh.vertices, target_points)
    le = edge_loss(mesh)
    lnc = normal_consistency_loss(mesh)
    total = cd + weights.lambda_edge * le + weights.lambda_nc * lnc
    return total, {"chamfer": cd, "edge": le, "normal_consistency": lnc}


def total_loss_with_vertex_grad(
    mesh: TriangleMesh, target_points: np.ndarray, weights: LossWeights
):
    cd, g_cd = chamfer_with_grad(mesh.vertices, target_points)
    le, g_e = edge_loss_with_grad(mesh)
    lnc, g_nc = normal_consistency_with_grad(mesh)
    total = cd + weights.lambda_edge * le + weights.lambda_nc * lnc
    grad = g_cd + weights.lambda_edge * g_e + weights.lambda_nc * g_nc
    return total, {"chamfer": cd, "edge": le, "normal_consistency": lnc}, grad
