"""Sparse SAR tomography to neural signed-distance surfaces.

Stages: :mod:`~sartomo.simulate` (phase histories), :mod:`~sartomo.inversion`
(per-sub-aperture sparse imaging and fusion), :mod:`~sartomo.pointcloud`
(oriented scatterer clouds), :mod:`~sartomo.network` and
:mod:`~sartomo.training` (Fourier-feature SDF network with iso-point
regularization), :mod:`~sartomo.isopoints`, :mod:`~sartomo.mesh` and
:mod:`~sartomo.pipeline`.
"""
from .errors import SartomoError
from .grid import VoxelGrid, auto_grid
from .inversion import fuse_noncoherent, invert_all, solve_subaperture
from .mesh import chamfer, extract_mesh
from .network import NetworkConfig, SdfNetwork, init_network, load_network, save_network
from .pointcloud import OrientedPointCloud, build_cloud
from .scenes import Box, Cylinder, Sphere, sample_scene, vehicle_proxy
from .simulate import GeometryConfig, make_geometry, simulate_phase_history
from .training import LossWeights, TrainConfig, loss_terms, train, validate

__version__ = "0.1.0"

__all__ = [
    "SartomoError", "VoxelGrid", "auto_grid", "fuse_noncoherent", "invert_all",
    "solve_subaperture", "chamfer", "extract_mesh", "NetworkConfig", "SdfNetwork",
    "init_network", "load_network", "save_network", "OrientedPointCloud", "build_cloud",
    "Box", "Cylinder", "Sphere", "sample_scene", "vehicle_proxy", "GeometryConfig",
    "make_geometry", "simulate_phase_history", "LossWeights", "TrainConfig", "loss_terms",
    "train", "validate",
]
