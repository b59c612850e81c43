"""Laser-directed grasping pipeline with a synthetic desk-scale simulator."""

from .geom import Pose, PointCloud, Rotation, VoxelGrid, vec3

__all__ = ["Pose", "PointCloud", "Rotation", "VoxelGrid", "vec3"]

__version__ = "0.1.0"
