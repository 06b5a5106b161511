"""Phase-field topology optimization with mixed Hu-Washizu finite elements."""

from phasetopo.material import MaterialParams, PhaseParams, VolumeControl
from phasetopo.mesh import Mesh, BoundaryRegion, DofMap, build_box_grid, select_region

__version__ = "0.1.0"

__all__ = [
    "MaterialParams",
    "PhaseParams",
    "VolumeControl",
    "Mesh",
    "BoundaryRegion",
    "DofMap",
    "build_box_grid",
    "select_region",
]
