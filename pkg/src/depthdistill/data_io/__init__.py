from .kitti import (
    CameraCalib,
    ObjectLabel,
    PointCloud,
    box_corners,
    format_labels,
    parse_calib,
    parse_labels,
    read_velodyne,
    wrap_angle,
    write_velodyne,
)
from .synthetic import SyntheticConfig, SyntheticScene, generate_synthetic_scene, synthetic_lidar

__all__ = [
    "CameraCalib",
    "ObjectLabel",
    "PointCloud",
    "SyntheticConfig",
    "SyntheticScene",
    "box_corners",
    "format_labels",
    "generate_synthetic_scene",
    "parse_calib",
    "parse_labels",
    "read_velodyne",
    "synthetic_lidar",
    "wrap_angle",
    "write_velodyne",
]
