"""Tracker-free dynamic object reconstruction from 2D mask tracks and LiDAR."""

from streetfuse.geom import CameraModel, PointCloud, RigidPose

__version__ = "0.1.0"

__all__ = ["CameraModel", "PointCloud", "RigidPose", "__version__"]
