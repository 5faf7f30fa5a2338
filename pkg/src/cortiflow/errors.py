"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration/argument/structural
problems exit 2, numeric failures exit 3, I/O failures exit 4.
"""


class CortiflowError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(CortiflowError, ValueError):
    """An operation was called with invalid arguments (empty sets, bad params)."""


class ConfigError(ArgumentError):
    """A configuration file failed schema validation."""


class StructuralError(CortiflowError):
    """Mesh connectivity violates a structural requirement (bad indices,
    boundary edge where a closed mesh is required, non-manifold edge)."""


class DegenerateGeometryError(StructuralError):
    """Geometry is degenerate (zero-area face, collapsed surface)."""


class ShapeError(CortiflowError):
    """Array or grid geometries do not match."""


class NumericError(CortiflowError):
    """A computation produced non-finite values or divided by zero."""


class OptimizationFailure(NumericError):
    """The surface fitter could not take a single descending step."""


class ProjectionFailure(NumericError):
    """Spherical projection could not avoid inverted triangles."""


class FormatError(CortiflowError, IOError):
    """A file did not conform to the expected on-disk format."""
