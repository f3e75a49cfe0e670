"""End-to-end occupancy network at desk scale.

Data flow for one scene with ``N`` cameras::

    images -> backbone -> F_n
    F_n -> DepthNet -> (depth score, F_feat)      F_n -> HeightNet -> height score
    (F_feat, depth score)  -> BEV splat    -> F_bev   [C, Y, X]
    (F_feat, height score) -> height splat -> F_3D    [C, Z, Y', X']
    F_bev -> DBA -> F_BEV;   slice(F_3D) -> DHA -> F_Height [C*Z, Y', X']
    fuse(F_Height, F_BEV) -> occupancy head -> logits [classes, Z_out, Y, X]

Every stage has a hand-written backward; :meth:`DAOcc.forward_vjp` chains
them explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .attention import DAParams, PARAM_KEYS, da_forward_vjp, dba_forward_vjp, dha_forward_vjp
from .grid import BinSpec, GridSpec
from .ops import bilinear_resize_vjp, conv2d_vjp, relu_vjp, softmax_vjp
from .tensor import DimensionError
from .view_transform import (compute_ranks, make_frustums, slice_heightwise, splat_bev_vjp,
                             splat_height_vjp)

TOY_BOUNDS = (-6.4, -6.4, -1.0, 6.4, 6.4, 5.4)


@dataclass
class ModelConfig:
    """Shapes, loss weights and optimizer settings.  Defaults are the toy benchmark."""

    image_size: tuple[int, int] = (64, 128)
    num_cameras: int = 4
    stride: int = 8
    backbone_channels: tuple[int, ...] = (8, 16, 16)
    channels: int = 16
    fuse_channels: int = 16
    bounds: tuple[float, ...] = TOY_BOUNDS
    bev_counts: tuple[int, int] = (32, 32)  # (X, Y) of the 1 x Y x X depth-splat grid
    height_counts: tuple[int, int, int] = (32, 32, 16)  # (X', Y', Z) of the height-splat grid
    z_out: int = 16
    depth_bins: tuple[int, float, float] = (24, 0.5, 10.1)
    num_classes: int = 6
    empty_class: int = 0
    loss_weights: tuple[float, ...] = (1.0, 1.0, 10.0, 1.0, 1.0)
    fusion: str = "concat"
    use_dha: bool = True
    use_dba: bool = True
    use_height_da: bool = True
    da_hidden: int | None = None
    use_mask: bool = True
    clamp_supervision: bool = True
    lr: float = 1e-4
    weight_decay: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if len(self.loss_weights) != 5:
            raise ValueError("need five loss weights")
        if self.num_classes < 2:
            raise ValueError("need at least one semantic class plus empty")
        if self.fusion not in ("concat", "add"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        Hi, Wi = self.image_size
        if Hi % self.stride or Wi % self.stride:
            raise DimensionError(f"image size {self.image_size} not divisible by stride {self.stride}")
        if len(self.backbone_channels) < 1 or self.stride != 2 ** len(self.backbone_channels):
            raise ValueError("backbone uses one stride-2 stage per doubling of the stride")

    @classmethod
    def occ3d(cls, **kw) -> "ModelConfig":
        """Occ3D-sized shapes (for FLOP accounting; too large to train here)."""
        base = dict(image_size=(256, 704), num_cameras=6, stride=16, backbone_channels=(64, 128, 256, 256),
                    channels=64, fuse_channels=64, bounds=(-40.0, -40.0, -1.0, 40.0, 40.0, 5.4),
                    bev_counts=(200, 200), height_counts=(32, 32, 16), z_out=16,
                    depth_bins=(59, 1.0, 60.0), num_classes=18, empty_class=17, lr=1e-4)
        base.update(kw)
        return cls(**base)

    @property
    def feat_size(self) -> tuple[int, int]:
        return (self.image_size[0] // self.stride, self.image_size[1] // self.stride)

    @property
    def bev_grid(self) -> GridSpec:
        return GridSpec(self.bounds, (self.bev_counts[0], self.bev_counts[1], 1))

    @property
    def height_grid(self) -> GridSpec:
        return GridSpec(self.bounds, tuple(self.height_counts))

    @property
    def occ_grid(self) -> GridSpec:
        return GridSpec(self.bounds, (self.bev_counts[0], self.bev_counts[1], self.z_out))

    @property
    def depth_binspec(self) -> BinSpec:
        return BinSpec(*self.depth_bins)

    @property
    def height_binspec(self) -> BinSpec:
        """Height bins coincide with the z layers of the height grid."""
        return BinSpec(self.height_counts[2], self.bounds[2], self.bounds[5])

    @property
    def hidden(self) -> int:
        return self.da_hidden or self.channels

    # -- flat key = value text ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"model.{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        defaults = cls()
        kw = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = (s.strip() for s in line.partition("="))
            name = key.split(".", 1)[1] if key.startswith("model.") else key
            if not hasattr(defaults, name):
                raise KeyError(f"unknown config key {key!r}")
            kw[name] = _parse_value(getattr(defaults, name), value)
        return cls(**kw)


def _parse_value(default, value: str):
    if isinstance(default, bool):
        if value.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {value!r}")
        return value.lower() == "true"
    if isinstance(default, tuple):
        items = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(float(v) if ("." in v or "e" in v.lower()) else int(v) for v in items)
    if default is None:
        return None if value in ("None", "") else int(value)
    return type(default)(value)


@dataclass
class ForwardOutputs:
    depth_score: np.ndarray  # (N, D, H, W)
    height_score: np.ndarray  # (N, Zh, H, W)
    f_bev: np.ndarray  # (1, C, Y, X)
    f_3d: np.ndarray  # (1, C, Z, Y', X')
    f_BEV: np.ndarray
    f_Height: np.ndarray  # (1, C*Z, Y', X')
    f_dh: np.ndarray  # (1, C_f, Y, X)
    logits: np.ndarray  # (1, classes, Z_out, Y, X)

    def predicted_labels(self) -> np.ndarray:
        return self.logits[0].argmax(axis=0).astype(np.uint8)


def _conv_init(rng, co, ci, k):
    std = np.sqrt(2.0 / (ci * k * k))
    return rng.standard_normal((co, ci, k, k)) * std, np.zeros(co)


class DAOcc:
    """Parameters live in ``self.params`` (name -> float64 array)."""

    def __init__(self, config: ModelConfig | None = None, params: dict | None = None):
        self.config = config or ModelConfig()
        self.params = params if params is not None else self.init_params(self.config)
        self._index_cache: dict = {}

    @staticmethod
    def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(cfg.seed)
        P: dict[str, np.ndarray] = {}
        C = cfg.channels
        ci = 3
        for i, co in enumerate(cfg.backbone_channels[:-1] + (C,)):
            P[f"backbone.{i}.w"], P[f"backbone.{i}.b"] = _conv_init(rng, co, ci, 3)
            ci = co
        P["depthnet.trunk.w"], P["depthnet.trunk.b"] = _conv_init(rng, C, C, 3)
        P["depthnet.depth.w"], P["depthnet.depth.b"] = _conv_init(rng, cfg.depth_binspec.count, C, 1)
        P["depthnet.feat.w"], P["depthnet.feat.b"] = _conv_init(rng, C, C, 1)
        P["heightnet.trunk.w"], P["heightnet.trunk.b"] = _conv_init(rng, C, C, 3)
        H, W = cfg.feat_size
        for name, L, d in (("heightnet.da_h", H, "h"), ("heightnet.da_v", W, "v")):
            for k, v in DAParams.init(L, cfg.hidden, d, rng).arrays().items():
                P[f"{name}.{k}"] = v
        P["heightnet.head.w"], P["heightnet.head.b"] = _conv_init(rng, cfg.height_binspec.count, C, 1)
        Xh, Yh, Z = cfg.height_counts
        X, Y = cfg.bev_counts
        for k, v in DAParams.init(Z, cfg.hidden, "h", rng).arrays().items():
            P[f"dha.{k}"] = v
        for name, L, d in (("dba.h", Y, "h"), ("dba.v", X, "v")):
            for k, v in DAParams.init(L, cfg.hidden, d, rng).arrays().items():
                P[f"{name}.{k}"] = v
        P["fuse.proj.w"], P["fuse.proj.b"] = _conv_init(rng, C, C * Z, 1)
        if cfg.fusion == "concat":
            P["fuse.mix.w"], P["fuse.mix.b"] = _conv_init(rng, cfg.fuse_channels, 2 * C, 1)
        cf = cfg.fuse_channels if cfg.fusion == "concat" else C
        P["head.conv.w"], P["head.conv.b"] = _conv_init(rng, cf, cf, 3)
        P["head.cls.w"], P["head.cls.b"] = _conv_init(rng, cfg.num_classes * cfg.z_out, cf, 1)
        P["head.cls.w"] *= 0.1
        return P

    # -- helpers -------------------------------------------------------------------------

    def _da(self, prefix: str, direction: str) -> DAParams:
        return DAParams.from_arrays({k: self.params[f"{prefix}.{k}"] for k in PARAM_KEYS}, direction)

    def _conv(self, name, x, stride=1, padding=0):
        return conv2d_vjp(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride, padding)

    def splat_indices(self, rigs):
        """``(bev_index, height_index)`` for a rig list, cached per calibration."""
        key = tuple(np.concatenate([r.K.ravel(), r.R.ravel(), r.t]).tobytes() for r in rigs)
        if key not in self._index_cache:
            cfg = self.config
            dpts = make_frustums(rigs, cfg.feat_size, cfg.depth_binspec, "depth")
            hpts = make_frustums(rigs, cfg.feat_size, cfg.height_binspec, "height")
            self._index_cache[key] = (compute_ranks(dpts, cfg.bev_grid), compute_ranks(hpts, cfg.height_grid))
        return self._index_cache[key]

    # -- stages ----------------------------------------------------------------------------

    def backbone_vjp(self, images):
        backs = []
        x = images
        for i in range(len(self.config.backbone_channels)):
            x, bc = self._conv(f"backbone.{i}", x, stride=2, padding=1)
            x, br = relu_vjp(x)
            backs.append((f"backbone.{i}", bc, br))

        def vjp(g, grads):
            for name, bc, br in reversed(backs):
                g, gw, gb = bc(br(g))
                grads[f"{name}.w"] = gw
                grads[f"{name}.b"] = gb
            return g

        return x, vjp

    def depthnet_vjp(self, fn):
        t, bt = self._conv("depthnet.trunk", fn, padding=1)
        t, br = relu_vjp(t)
        logits, bd = self._conv("depthnet.depth", t)
        dscore, bs = softmax_vjp(logits, axis=1)
        feat, bf = self._conv("depthnet.feat", t)

        def vjp(g_score, g_feat, grads):
            gt1, grads["depthnet.depth.w"], grads["depthnet.depth.b"] = bd(bs(g_score))
            gt2, grads["depthnet.feat.w"], grads["depthnet.feat.b"] = bf(g_feat)
            gfn, grads["depthnet.trunk.w"], grads["depthnet.trunk.b"] = bt(br(gt1 + gt2))
            return gfn

        return (dscore, feat), vjp

    def heightnet_vjp(self, fn):
        t, bt = self._conv("heightnet.trunk", fn, padding=1)
        t, br = relu_vjp(t)
        x = fn + t
        blocks = []
        if self.config.use_height_da:
            for name, d in (("heightnet.da_h", "h"), ("heightnet.da_v", "v")):
                y, b = da_forward_vjp(x, self._da(name, d))
                blocks.append((name, b))
                x = x + y
        logits, bh = self._conv("heightnet.head", x)
        hscore, bs = softmax_vjp(logits, axis=1)

        def vjp(g_score, grads):
            g, grads["heightnet.head.w"], grads["heightnet.head.b"] = bh(bs(g_score))
            for name, b in reversed(blocks):
                gx, pg = b(g)
                g = g + gx
                for k, v in pg.items():
                    grads[f"{name}.{k}"] = v
            gt, grads["heightnet.trunk.w"], grads["heightnet.trunk.b"] = bt(br(g))
            return g + gt

        return hscore, vjp

    def fuse_vjp(self, f_height, f_bev):
        """Resize F_Height to the BEV grid, project to ``C`` channels, fuse with F_BEV."""
        Y, X = f_bev.shape[-2:]
        r, brz = bilinear_resize_vjp(f_height, (Y, X))
        p, bp = self._conv("fuse.proj", r)
        if self.config.fusion == "add":
            out = p + f_bev

            def vjp(g, grads):
                gr, grads["fuse.proj.w"], grads["fuse.proj.b"] = bp(g)
                return brz(gr), g

            return out, vjp
        C = p.shape[1]
        cat = np.concatenate([p, f_bev], axis=1)
        out, bm = self._conv("fuse.mix", cat)

        def vjp(g, grads):
            gc, grads["fuse.mix.w"], grads["fuse.mix.b"] = bm(g)
            gr, grads["fuse.proj.w"], grads["fuse.proj.b"] = bp(gc[:, :C])
            return brz(gr), gc[:, C:]

        return out, vjp

    def head_vjp(self, f_dh):
        """Channel-to-height head: output channel ``cls * Z_out + z``."""
        cfg = self.config
        h, bc = self._conv("head.conv", f_dh, padding=1)
        h, br = relu_vjp(h)
        o, bo = self._conv("head.cls", h)
        B, _, Y, X = o.shape
        logits = o.reshape(B, cfg.num_classes, cfg.z_out, Y, X)

        def vjp(g, grads):
            gh, grads["head.cls.w"], grads["head.cls.b"] = bo(g.reshape(o.shape))
            gx, grads["head.conv.w"], grads["head.conv.b"] = bc(br(gh))
            return gx

        return logits, vjp

    # -- full pass -------------------------------------------------------------------------------

    def forward_vjp(self, images, rigs):
        """Forward one scene; the vjp maps output cotangents to a parameter-gradient dict.

        ``vjp(g_depth_score, g_height_score, g_logits)``; any cotangent may be None.
        """
        cfg = self.config
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise DimensionError(f"expected images [N,3,H,W], got {images.shape}")
        if images.shape[2] % cfg.stride or images.shape[3] % cfg.stride:
            raise DimensionError(f"image extents {images.shape[2:]} not divisible by stride {cfg.stride}")
        idx_bev, idx_h = self.splat_indices(rigs)
        fn, b_bb = self.backbone_vjp(images)
        (dscore, feat), b_dn = self.depthnet_vjp(fn)
        hscore, b_hn = self.heightnet_vjp(fn)
        f_bev, b_sb = splat_bev_vjp(feat, dscore, idx_bev)
        f_bev = f_bev[None]
        f_3d, b_sh = splat_height_vjp(feat, hscore, idx_h)
        f_3d = f_3d[None]
        Xh, Yh, Z = cfg.height_counts
        f_height = slice_heightwise(f_3d)
        if cfg.use_dha:
            f_Height, b_dha = dha_forward_vjp(f_height, self._da("dha", "h"), Yh, Xh)
        else:
            f_Height, b_dha = f_3d.reshape(1, -1, Yh, Xh), None
        if cfg.use_dba:
            f_BEV, b_dba = dba_forward_vjp(f_bev, self._da("dba.h", "h"), self._da("dba.v", "v"))
        else:
            f_BEV, b_dba = f_bev, None
        f_dh, b_fuse = self.fuse_vjp(f_Height, f_BEV)
        logits, b_head = self.head_vjp(f_dh)
        outs = ForwardOutputs(dscore, hscore, f_bev, f_3d, f_BEV, f_Height, f_dh, logits)

        def vjp(g_dscore=None, g_hscore=None, g_logits=None):
            grads = {k: np.zeros_like(v) for k, v in self.params.items()}
            g_logits = np.zeros_like(logits) if g_logits is None else g_logits
            g_fdh = b_head(g_logits, grads)
            g_fH, g_fB = b_fuse(g_fdh, grads)
            if b_dba is not None:
                g_fbev, gh, gv = b_dba(g_fB)
                for k in PARAM_KEYS:
                    grads[f"dba.h.{k}"] = gh[k]
                    grads[f"dba.v.{k}"] = gv[k]
            else:
                g_fbev = g_fB
            if b_dha is not None:
                g_fheight, gd = b_dha(g_fH)
                for k in PARAM_KEYS:
                    grads[f"dha.{k}"] = gd[k]
                g_f3d = g_fheight.reshape(f_3d.shape)
            else:
                g_f3d = g_fH.reshape(f_3d.shape)
            gfeat1, gh_score = b_sh(g_f3d[0])
            gfeat2, gd_score = b_sb(g_fbev[0])
            if g_dscore is not None:
                gd_score = gd_score + g_dscore
            if g_hscore is not None:
                gh_score = gh_score + g_hscore
            gfn = b_dn(gd_score, gfeat1 + gfeat2, grads) + b_hn(gh_score, grads)
            b_bb(gfn, grads)
            return grads

        return outs, vjp

    def forward(self, images, rigs) -> ForwardOutputs:
        return self.forward_vjp(images, rigs)[0]

    def with_params(self, params) -> "DAOcc":
        m = DAOcc(self.config, params)
        m._index_cache = self._index_cache
        return m


def ablation_config(base: ModelConfig, dha: bool, dba: bool, z: int | None = None) -> ModelConfig:
    kw = dict(use_dha=dha, use_dba=dba)
    if z is not None:
        X, Y, _ = base.height_counts
        kw["height_counts"] = (X, Y, z)
    return replace(base, **kw)
