"""File codecs.

Meshes: ASCII OBJ (v/f records only) and binary CFM1
    magic "CFM1", little-endian u32 vertex count, u32 face count,
    f32 vertex triples, u32 face triples.
Volumes: raw little-endian f32 (x fastest, then y, z; components slowest)
    with a JSON sidecar {dims, spacing_mm, origin_mm, components} at
    <path>.json.
Per-vertex scalars: CSV (vertex index, value) and binary CFS1
    (magic "CFS1", u32 count, f32 values).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fields import VolumeGrid
from .mesh import TriangleMesh, VertexScalarField

__all__ = [
    "read_obj", "write_obj",
    "read_mesh_binary", "write_mesh_binary",
    "read_mesh", "write_mesh",
    "read_volume", "write_volume",
    "read_scalars_csv", "write_scalars_csv",
    "read_scalars_binary", "write_scalars_binary",
]

MESH_MAGIC = b"CFM1"
SCALAR_MAGIC = b"CFS1"


# -- OBJ ---------------------------------------------------------------------


def write_obj(path, mesh: TriangleMesh) -> None:
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    vertices, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
            vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: only triangle faces supported")
            # tolerate v/vt/vn references; only the vertex index is used
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        # all other record types are ignored
    if not vertices:
        raise FormatError(f"{path}: no vertex records")
    return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int64))


# -- CFM1 binary mesh --------------------------------------------------------


def write_mesh_binary(path, mesh: TriangleMesh) -> None:
    with open(path, "wb") as fh:
        fh.write(MESH_MAGIC)
        fh.write(struct.pack("<II", mesh.n_vertices, mesh.n_faces))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        fh.write(mesh.faces.astype("<u4").tobytes())


def read_mesh_binary(path) -> TriangleMesh:
    blob = Path(path).read_bytes()
    if blob[:4] != MESH_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MESH_MAGIC!r}")
    nv, nf = struct.unpack_from("<II", blob, 4)
    off = 8
    need = off + 12 * nv + 12 * nf
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes, got {len(blob)}")
    vertices = np.frombuffer(blob, dtype="<f4", count=3 * nv, offset=off)
    faces = np.frombuffer(blob, dtype="<u4", count=3 * nf, offset=off + 12 * nv)
    return TriangleMesh(
        vertices.reshape(nv, 3).astype(np.float64),
        faces.reshape(nf, 3).astype(np.int64),
    )


def write_mesh(path, mesh: TriangleMesh) -> None:
    path = Path(path)
    if path.suffix == ".obj":
        write_obj(path, mesh)
    else:
        write_mesh_binary(path, mesh)


def read_mesh(path) -> TriangleMesh:
    path = Path(path)
    if path.suffix == ".obj":
        return read_obj(path)
    return read_mesh_binary(path)


# -- raw volume + JSON sidecar ------------------------------------------------


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_volume(path, grid: VolumeGrid) -> None:
    path = Path(path)
    # file order: components slowest, then z, y, x fastest
    flat = np.transpose(grid.data, (3, 2, 1, 0)).astype("<f4").tobytes()
    path.write_bytes(flat)
    meta = {
        "dims": list(grid.dims),
        "spacing_mm": [float(s) for s in grid.spacing],
        "origin_mm": [float(o) for o in grid.origin],
        "components": grid.ncomp,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_volume(path) -> VolumeGrid:
    path = Path(path)
    try:
        meta = json.loads(_sidecar(path).read_text())
        dims = tuple(int(d) for d in meta["dims"])
        ncomp = int(meta["components"])
        spacing = np.array(meta["spacing_mm"], dtype=np.float64)
        origin = np.array(meta["origin_mm"], dtype=np.float64)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad volume sidecar: {exc}") from exc
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = dims[0] * dims[1] * dims[2] * ncomp
    if raw.size != expected:
        raise FormatError(f"{path}: expected {expected} f32 values, got {raw.size}")
    data = raw.reshape(ncomp, dims[2], dims[1], dims[0]).astype(np.float64)
    return VolumeGrid(spacing, origin, np.transpose(data, (3, 2, 1, 0)))


# -- per-vertex scalars --------------------------------------------------------


def write_scalars_csv(path, field: VertexScalarField) -> None:
    lines = ["vertex,value"]
    for i, v in enumerate(field.values):
        lines.append(f"{i},{v!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scalars_csv(path, mesh: TriangleMesh) -> VertexScalarField:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "vertex,value":
        raise FormatError(f"{path}: missing 'vertex,value' header")
    values = np.zeros(mesh.n_vertices)
    seen = np.zeros(mesh.n_vertices, dtype=bool)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            idx_s, val_s = line.split(",")
            idx = int(idx_s)
            values[idx] = float(val_s)
            seen[idx] = True
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{lineno}: bad record {line!r}") from exc
    if not seen.all():
        raise FormatError(f"{path}: missing values for {int((~seen).sum())} vertices")
    return VertexScalarField(mesh, values)


def write_scalars_binary(path, field: VertexScalarField) -> None:
    with open(path, "wb") as fh:
        fh.write(SCALAR_MAGIC)
        fh.write(struct.pack("<I", len(field.values)))
        fh.write(field.values.astype("<f4").tobytes())


def read_scalars_binary(path, mesh: TriangleMesh) -> VertexScalarField:
    blob = Path(path).read_bytes()
    if blob[:4] != SCALAR_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {SCALAR_MAGIC!r}")
    (count,) = struct.unpack_from("<I", blob, 4)
    if count != mesh.n_vertices:
        raise FormatError(f"{path}: {count} values for a {mesh.n_vertices}-vertex mesh")
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=8)
    return VertexScalarField(mesh, values.astype(np.float64))
