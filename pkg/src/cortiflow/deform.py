"""Multiscale diffeomorphic deformation of template meshes.

A deformation stack holds L velocity fields at dyadic resolutions: scale l
(1-based) is downsampled from full resolution by 2**(L-l-1) for l < L, and
the last scale runs at full resolution. Each stage integrates its field,
smooths the integrated deformation, and advects the vertices of the previous
stage's surface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError
from .fields import (
    IntegrationConfig,
    VolumeGrid,
    gaussian_smooth,
    integrate,
    sample_trilinear,
)
from .io import read_volume, write_volume
from .mesh import TriangleMesh

__all__ = [
    "SvfStack",
    "scale_factors",
    "coarse_dims",
    "stack_grid_geometries",
    "apply_deformation",
    "integrate_stack_field",
    "multiscale_deform",
    "save_stack",
    "load_stack",
]


def scale_factors(n_scales: int) -> list[int]:
    """Downsampling factor per scale: 2**(L-l-1) for l < L, full res for l = L."""
    if n_scales < 1:
        raise ArgumentError("need at least one scale")
    return [2 ** (n_scales - l - 1) for l in range(1, n_scales)] + [1]


def coarse_dims(full_dims, factor: int) -> tuple[int, int, int]:
    """Coarse grid dims that cover the full grid's box: ceil((n-1)/f) + 1."""
    return tuple(int(-((n - 1) // -factor)) + 1 for n in full_dims)


def stack_grid_geometries(full_dims, spacing, origin, n_scales: int):
    """(dims, spacing, origin) per scale, sharing the world origin."""
    spacing = np.asarray(spacing, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    out = []
    for f in scale_factors(n_scales):
        out.append((coarse_dims(full_dims, f), spacing * f, origin))
    return out


@dataclass(eq=False)
class SvfStack:
    """Ordered stationary velocity fields plus shared integration settings."""

    svfs: list
    integration: IntegrationConfig

    def __post_init__(self):
        if len(self.svfs) < 1:
            raise ArgumentError("stack needs at least one velocity field")
        full = self.svfs[-1]
        factors = scale_factors(len(self.svfs))
        for l, (svf, f) in enumerate(zip(self.svfs, factors), start=1):
            if svf.ncomp != 3:
                raise ShapeError(f"scale {l}: velocity fields need 3 components")
            if not np.array_equal(svf.origin, full.origin):
                raise ShapeError(f"scale {l}: all fields must share the world origin")
            if not np.allclose(svf.spacing, full.spacing * f, rtol=0, atol=0):
                raise ShapeError(
                    f"scale {l}: spacing {svf.spacing} != factor {f} x {full.spacing}"
                )
            if svf.dims != coarse_dims(full.dims, f):
                raise ShapeError(
                    f"scale {l}: dims {svf.dims} inconsistent with dyadic factor {f}"
                )

    @property
    def n_scales(self) -> int:
        return len(self.svfs)

    @classmethod
    def zeros(cls, full_dims, spacing, origin, n_scales: int,
              integration: IntegrationConfig | None = None) -> "SvfStack":
        integration = integration or IntegrationConfig()
        fields = [
            VolumeGrid.zeros(dims, sp, o)
            for dims, sp, o in stack_grid_geometries(full_dims, spacing, origin, n_scales)
        ]
        return cls(fields, integration)

    def with_data(self, data_list) -> "SvfStack":
        return SvfStack(
            [svf.with_data(d) for svf, d in zip(self.svfs, data_list)],
            self.integration,
        )


def apply_deformation(mesh: TriangleMesh, deformation: VolumeGrid) -> TriangleMesh:
    """Advect mesh vertices by the displacement field: v <- v + u(v)."""
    disp = sample_trilinear(deformation, mesh.vertices)
    new_vertices = mesh.vertices + disp
    if not np.isfinite(new_vertices).all():
        bad = int(np.argmax(~np.isfinite(new_vertices).all(axis=1)))
        raise NumericError(f"non-finite position for vertex {bad} after deformation")
    return mesh.with_vertices(new_vertices)


def integrate_stack_field(svf: VolumeGrid, integration: IntegrationConfig) -> VolumeGrid:
    """Integrate one velocity field and smooth the integrated deformation
    (integration first, then Gaussian smoothing)."""
    phi = integrate(svf, integration)
    return gaussian_smooth(phi, integration.smoothing_sigma)


def multiscale_deform(template: TriangleMesh, stack: SvfStack) -> list[TriangleMesh]:
    """Deform the template through every scale; returns the whole trajectory
    [S0, S1, ..., SL] including the input surface."""
    surfaces = [template]
    for svf in stack.svfs:
        phi = integrate_stack_field(svf, stack.integration)
        surfaces.append(apply_deformation(surfaces[-1], phi))
    return surfaces


# -- stack manifest ----------------------------------------------------------


def save_stack(stack: SvfStack, directory, prefix: str = "svf") -> Path:
    """Write the stack's volumes plus a manifest JSON; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    factors = scale_factors(stack.n_scales)
    scales = []
    for l, (svf, f) in enumerate(zip(stack.svfs, factors), start=1):
        name = f"{prefix}_scale{l}.raw"
        write_volume(directory / name, svf)
        scales.append({"path": name, "factor": f})
    manifest = {
        "scales": scales,
        "steps_K": stack.integration.steps_K,
        "method": stack.integration.method,
        "smoothing_sigma": stack.integration.smoothing_sigma,
    }
    path = directory / f"{prefix}_stack.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_stack(manifest_path) -> SvfStack:
    """Load a stack manifest, validating the dyadic-factor invariant."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    try:
        scales = manifest["scales"]
        integration = IntegrationConfig(
            steps_K=int(manifest["steps_K"]),
            method=manifest.get("method", "scaling-squaring"),
            smoothing_sigma=float(manifest["smoothing_sigma"]),
        )
    except KeyError as exc:
        raise ArgumentError(f"stack manifest missing key: {exc}") from exc
    declared = [int(s["factor"]) for s in scales]
    if declared != scale_factors(len(scales)):
        raise ArgumentError(
            f"declared factors {declared} violate the dyadic invariant "
            f"{scale_factors(len(scales))}"
        )
    fields = [read_volume(manifest_path.parent / s["path"]) for s in scales]
    return SvfStack(fields, integration)
