from .ap import DIFFICULTIES, EvalConfig, MatchResult, ap_r40, evaluate, match_scene
from .iou import Box3D, iou_2d, iou_3d, iou_bev

__all__ = [
    "DIFFICULTIES",
    "Box3D",
    "EvalConfig",
    "MatchResult",
    "ap_r40",
    "evaluate",
    "iou_2d",
    "iou_3d",
    "iou_bev",
    "match_scene",
]
