"""Implicit surfaces from oriented point clouds and anisotropic meshes adapted to them."""

__version__ = "0.1.0"

from .adaptation import AdaptationResult, IterationStats, MeshAdapter, adaptation_loop
from .eimls import EIMLS, EimlsConfig, EimlsField
from .isosurface import extract_contour_2d, extract_surface_3d
from .mesh import SimplicialMesh, generate_box_mesh
from .metric import MetricField, target_metric, unit_metric
from .pointcloud import OrientedPointCloud, load_cloud, save_cloud
from .remesh import AdaptOptions, adapt
from .spatial import NeighborIndex

__all__ = [
    "AdaptOptions", "AdaptationResult", "EIMLS", "EimlsConfig", "EimlsField", "IterationStats",
    "MeshAdapter", "MetricField", "NeighborIndex", "OrientedPointCloud", "SimplicialMesh",
    "adapt", "adaptation_loop", "extract_contour_2d", "extract_surface_3d", "generate_box_mesh",
    "load_cloud", "save_cloud", "target_metric", "unit_metric",
]
