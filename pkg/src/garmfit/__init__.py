"""garmfit: registration of explicit garment templates to implicit scene fields."""

__version__ = "0.1.0"

from .geometry import Polyline3, SparseOperator, TriMesh  # noqa: F401
