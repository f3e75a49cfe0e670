"""Desk-scale directional-attention occupancy pipeline in numpy.

Every differentiable op is a ``*_vjp`` function returning ``(output, vjp)``;
tensors are float64 ``numpy.ndarray``.
"""
from .attention import DAParams, da_forward, dba_forward, dha_forward
from .flops import count_flops
from .geometry import CameraRig, PointCloud, build_depth_map, build_height_map, project_point
from .gradcheck import gradcheck
from .grid import BinSpec, GridSpec
from .metrics import EvalReport, OccupancyGrid, miou
from .model import DAOcc, ModelConfig
from .scenegen import SceneSpec, generate_scene, random_scene_spec
from .tensor import DimensionError, load_checkpoint, load_tensor, save_checkpoint, save_tensor
from .view_transform import compute_ranks, slice_heightwise, splat_bev, splat_height, unslice_heightwise

__all__ = [
    "BinSpec", "CameraRig", "DAOcc", "DAParams", "DimensionError", "EvalReport", "GridSpec", "ModelConfig",
    "OccupancyGrid", "PointCloud", "SceneSpec", "build_depth_map", "build_height_map", "compute_ranks",
    "count_flops", "da_forward", "dba_forward", "dha_forward", "generate_scene", "gradcheck", "load_checkpoint",
    "load_tensor", "miou", "project_point", "random_scene_spec", "save_checkpoint", "save_tensor",
    "slice_heightwise", "splat_bev", "splat_height", "unslice_heightwise",
]
