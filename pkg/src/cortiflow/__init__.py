"""Geometry-processing toolkit: diffeomorphic surface deformation by
stationary-velocity-field integration, loss-driven template fitting, surface
inflation and feature estimation, and distortion-minimizing spherical
projection, verified on synthetic genus-0 surfaces."""

from .errors import (
    ArgumentError,
    ConfigError,
    CortiflowError,
    DegenerateGeometryError,
    FormatError,
    NumericError,
    OptimizationFailure,
    ProjectionFailure,
    ShapeError,
    StructuralError,
)
from .mesh import (
    TriangleMesh,
    VertexScalarField,
    edge_lengths,
    euler_characteristic,
    face_normals_areas,
    laplacian_smooth_vertex_vectors,
    surface_area,
    taubin_smooth,
    vertex_normals,
)

__version__ = "0.1.0"
