"""Analytic multiply-add accounting for one forward pass.

Counts are pure functions of :class:`ModelConfig` shapes.  Convolutions,
MLPs and the directional correlations count one multiply-add per weight
tap; splats count one per frustum point and channel (every frustum point is
counted, whether or not it lands inside the grid).  Bias additions,
activations, softmax and pooling are not counted.  FLOPs are reported as
twice the multiply-adds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .model import ModelConfig


def conv_macs(batch, c_in, c_out, out_h, out_w, k) -> int:
    return batch * c_out * out_h * out_w * c_in * k * k


def mlp_macs(rows, dims) -> int:
    return rows * sum(a * b for a, b in zip(dims[:-1], dims[1:]))


def da_macs(batch, channels, length, other, hidden) -> int:
    """Kernel MLP (``L -> hidden -> L`` per channel) plus an ``L``-tap correlation per output."""
    return mlp_macs(batch * channels, (length, hidden, length)) + batch * channels * length * other * length


def resize_macs(channels, out_h, out_w, same: bool) -> int:
    return 0 if same else channels * out_h * out_w * 4


@dataclass
class FlopReport:
    macs: dict = field(default_factory=dict)  # module -> multiply-adds

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    @property
    def flops(self) -> dict:
        return {k: 2 * v for k, v in self.macs.items()}

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    def to_text(self) -> str:
        lines = [f"{k} = {v} MACs / {2 * v} FLOPs" for k, v in self.macs.items()]
        lines.append(f"total = {self.total_macs} MACs / {self.total_flops} FLOPs")
        return "\n".join(lines) + "\n"


def count_flops(cfg: ModelConfig) -> FlopReport:
    N = cfg.num_cameras
    C = cfg.channels
    H, W = cfg.feat_size
    D = cfg.depth_binspec.count
    Xh, Yh, Z = cfg.height_counts
    X, Y = cfg.bev_counts
    hid = cfg.hidden
    m: dict[str, int] = {}

    h, w = cfg.image_size
    ci = 3
    bb = 0
    for co in cfg.backbone_channels[:-1] + (C,):
        h, w = (h + 1) // 2, (w + 1) // 2
        bb += conv_macs(N, ci, co, h, w, 3)
        ci = co
    m["backbone"] = bb
    m["depthnet"] = conv_macs(N, C, C, H, W, 3) + conv_macs(N, C, D, H, W, 1) + conv_macs(N, C, C, H, W, 1)
    hn = conv_macs(N, C, C, H, W, 3) + conv_macs(N, C, Z, H, W, 1)
    if cfg.use_height_da:
        hn += da_macs(N, C, H, W, hid) + da_macs(N, C, W, H, hid)
    m["heightnet"] = hn
    m["splat_bev"] = N * D * H * W * C
    m["splat_height"] = N * Z * H * W * C
    m["dha"] = da_macs(1, C, Z, Yh * Xh, hid) if cfg.use_dha else 0
    m["dba"] = (da_macs(1, C, Y, X, hid) + da_macs(1, C, X, Y, hid)) if cfg.use_dba else 0
    fuse = resize_macs(C * Z, Y, X, (Yh, Xh) == (Y, X)) + conv_macs(1, C * Z, C, Y, X, 1)
    cf = C
    if cfg.fusion == "concat":
        cf = cfg.fuse_channels
        fuse += conv_macs(1, 2 * C, cf, Y, X, 1)
    m["fuse"] = fuse
    m["head"] = conv_macs(1, cf, cf, Y, X, 3) + conv_macs(1, cf, cfg.num_classes * cfg.z_out, Y, X, 1)
    return FlopReport(m)
