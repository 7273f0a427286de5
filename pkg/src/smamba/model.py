"""Mamba-UNet super-resolution network.

Functional style: parameters live in an ordered ``name -> Tensor`` registry
and the forward functions read from it. Data flow for an LR batch
(B, h, w, 1) at scale s::

    3x3 conv (1 -> E*s^2), pixel shuffle s          -> (B, H, W, E)
    patch embed, conv k=p stride p (E -> C0)        -> (B, H/p, W/p, C0)
    encoder:   [blocks, patch merge] x 3
    bottleneck: blocks at C3
    decoder:   [patch expand, concat skip + linear, blocks] x 3
    final:     linear C0 -> C0, pixel shuffle p     -> (B, H, W, C0/p^2)
               3x3 conv -> 1 channel, + bicubic(lr)

Vision Mamba block, for a grid x with C channels and Ce = expansion * C::

    u   = LN(x)
    a   = Linear(u)                                   path A
    b   = LN(ISS2D(SiLU(DWConv3x3(Linear(u)))))       path B
    out = x + Dropout(Linear(SiLU(a) * b))
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import srt
from . import tensor as T
from .data import bicubic_upscale
from .errors import DataError, ShapeError
from .iss2d import N_DIRECTIONS, iss2d_forward
from .ssm import SSMParams
from .ssm import init_params as init_ssm_params
from .ssm import param_shapes as ssm_param_shapes
from .tensor import Tensor

N_LEVELS = 4
CHECKPOINT_MAGIC = b"SMCK"
CHECKPOINT_VERSION = 1


@dataclass
class UNetConfig:
    scale: int = 2
    patch_size: int = 2
    level_channels: tuple[int, ...] = (96, 128, 384, 768)
    blocks_per_level: int = 4
    state_dim: int = 16
    dropout: float = 0.3
    head_channels: int = 16
    expansion: int = 2
    use_iss2d_weights: bool = True
    use_self_prior: bool = True
    use_d_skip: bool = True
    per_direction_params: bool = False
    scan_chunk: int | None = None

    def __post_init__(self):
        self.level_channels = tuple(int(c) for c in self.level_channels)
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if len(self.level_channels) != N_LEVELS:
            raise ValueError(f"level_channels must list {N_LEVELS} levels, got {self.level_channels}")
        if self.patch_size < 1 or self.level_channels[0] % (self.patch_size ** 2):
            raise ValueError("level_channels[0] must be divisible by patch_size**2 for the final projection")
        if self.blocks_per_level < 0 or self.state_dim < 1 or not 0 <= self.dropout < 1:
            raise ValueError("invalid blocks_per_level / state_dim / dropout")

    @property
    def divisor(self) -> int:
        """HR extents must be multiples of this."""
        return self.patch_size * 2 ** (N_LEVELS - 1)

    @property
    def final_channels(self) -> int:
        return self.level_channels[0] // self.patch_size ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_channels"] = list(self.level_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown UNetConfig keys: {sorted(unknown)}")
        return cls(**d)


def micro_config(**overrides) -> UNetConfig:
    """The desk-scale configuration used by the overfit / determinism checks."""
    base = dict(level_channels=(16, 24, 48, 96), blocks_per_level=2)
    base.update(overrides)
    return UNetConfig(**base)


# --- parameter registry ----------------------------------------------------------------------

@dataclass
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str          # "fan_in" | "zeros" | "ones" | "ssm"
    group: str         # breakdown bucket
    trainable: bool = True
    fan_in: int = 0


@dataclass
class _Specs:
    items: list[ParamSpec] = field(default_factory=list)

    def add(self, name, shape, init, group, trainable=True, fan_in=0):
        self.items.append(ParamSpec(name, tuple(int(s) for s in shape), init, group, trainable, fan_in))


def _block_specs(sp: _Specs, prefix: str, C: int, cfg: UNetConfig, group: str) -> None:
    Ce = cfg.expansion * C
    sp.add(prefix + "norm1.w", (C,), "ones", group)
    sp.add(prefix + "norm1.b", (C,), "zeros", group)
    sp.add(prefix + "in_a.w", (C, Ce), "fan_in", group, fan_in=C)
    sp.add(prefix + "in_a.b", (Ce,), "zeros", group)
    sp.add(prefix + "in_b.w", (C, Ce), "fan_in", group, fan_in=C)
    sp.add(prefix + "in_b.b", (Ce,), "zeros", group)
    sp.add(prefix + "dw.w", (3, 3, Ce), "fan_in", group, fan_in=9)
    sp.add(prefix + "dw.b", (Ce,), "zeros", group)
    ssm_prefixes = [f"ssm{i}." for i in range(N_DIRECTIONS)] if cfg.per_direction_params else ["ssm."]
    for sprefix in ssm_prefixes:
        for k, shape in ssm_param_shapes(Ce, cfg.state_dim).items():
            sp.add(prefix + sprefix + k, shape, "ssm", group)
    sp.add(prefix + "fusion.logits", (N_DIRECTIONS,), "zeros", group, trainable=cfg.use_iss2d_weights)
    sp.add(prefix + "norm2.w", (Ce,), "ones", group)
    sp.add(prefix + "norm2.b", (Ce,), "zeros", group)
    sp.add(prefix + "out.w", (Ce, C), "fan_in", group, fan_in=Ce)
    sp.add(prefix + "out.b", (C,), "zeros", group)


def param_specs(cfg: UNetConfig) -> list[ParamSpec]:
    """Every parameter of the network, in deterministic registry order."""
    sp = _Specs()
    s, p, E = cfg.scale, cfg.patch_size, cfg.head_channels
    ch = cfg.level_channels
    sp.add("head.conv.w", (3, 3, 1, E * s * s), "fan_in", "head", fan_in=9)
    sp.add("head.conv.b", (E * s * s,), "zeros", "head")
    sp.add("embed.w", (p, p, E, ch[0]), "fan_in", "embed", fan_in=p * p * E)
    sp.add("embed.b", (ch[0],), "zeros", "embed")
    for lvl in range(N_LEVELS - 1):
        for j in range(cfg.blocks_per_level):
            _block_specs(sp, f"enc{lvl}.blk{j}.", ch[lvl], cfg, f"encoder.l{lvl}.blocks")
        sp.add(f"enc{lvl}.merge.norm.w", (4 * ch[lvl],), "ones", f"encoder.l{lvl}.merge")
        sp.add(f"enc{lvl}.merge.norm.b", (4 * ch[lvl],), "zeros", f"encoder.l{lvl}.merge")
        sp.add(f"enc{lvl}.merge.lin.w", (4 * ch[lvl], ch[lvl + 1]), "fan_in", f"encoder.l{lvl}.merge", fan_in=4 * ch[lvl])
    for j in range(cfg.blocks_per_level):
        _block_specs(sp, f"bott.blk{j}.", ch[-1], cfg, "bottleneck.blocks")
    for lvl in reversed(range(N_LEVELS - 1)):
        g = f"decoder.l{lvl}"
        sp.add(f"dec{lvl}.expand.w", (ch[lvl + 1], 4 * ch[lvl]), "fan_in", g + ".expand", fan_in=ch[lvl + 1])
        sp.add(f"dec{lvl}.fuse.w", (2 * ch[lvl], ch[lvl]), "fan_in", g + ".fuse", fan_in=2 * ch[lvl])
        sp.add(f"dec{lvl}.fuse.b", (ch[lvl],), "zeros", g + ".fuse")
        for j in range(cfg.blocks_per_level):
            _block_specs(sp, f"dec{lvl}.blk{j}.", ch[lvl], cfg, g + ".blocks")
    cf = cfg.final_channels
    sp.add("final.expand.w", (ch[0], p * p * cf), "fan_in", "final", fan_in=ch[0])
    sp.add("final.conv.w", (3, 3, cf, 1), "zeros", "final")
    sp.add("final.conv.b", (1,), "zeros", "final")
    return sp.items


def init_params(cfg: UNetConfig, seed: int = 0, dtype=np.float32) -> "OrderedDict[str, Tensor]":
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    ssm_cache: dict[str, dict[str, np.ndarray]] = {}
    for spec in param_specs(cfg):
        if spec.init == "zeros":
            arr = np.zeros(spec.shape)
        elif spec.init == "ones":
            arr = np.ones(spec.shape)
        elif spec.init == "fan_in":
            bound = 1.0 / np.sqrt(spec.fan_in)
            arr = rng.uniform(-bound, bound, size=spec.shape)
        elif spec.init == "ssm":
            prefix, key = spec.name.rsplit(".", 1)
            if prefix not in ssm_cache:
                ssm_cache[prefix] = init_ssm_params(spec.shape[0], cfg.state_dim, rng, np.float64)
            arr = ssm_cache[prefix][key]
        else:
            raise ValueError(spec.init)
        params[spec.name] = Tensor(np.asarray(arr, dtype=dtype), requires_grad=spec.trainable, name=spec.name)
    return params


def trainable(params) -> list[Tensor]:
    return [t for t in params.values() if t.requires_grad]


def param_breakdown(cfg: UNetConfig) -> "OrderedDict[str, int]":
    """Trainable scalar count per module group, in registry order."""
    out: OrderedDict[str, int] = OrderedDict()
    for spec in param_specs(cfg):
        if spec.trainable:
            out[spec.group] = out.get(spec.group, 0) + int(np.prod(spec.shape))
    return out


def param_count(cfg: UNetConfig) -> int:
    return sum(param_breakdown(cfg).values())


# --- building blocks ------------------------------------------------------------------------

def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(B, h, w, C*r*r) -> (B, h*r, w*r, C); channel ``c*r*r + dy*r + dx`` lands at ``(y*r+dy, x*r+dx, c)``."""
    B, h, w, Cr = x.shape
    if Cr % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {Cr} not divisible by {r * r}")
    C = Cr // (r * r)
    y = T.reshape(x, (B, h, w, C, r, r))
    y = T.permute(y, (0, 1, 4, 2, 5, 3))
    return T.reshape(y, (B, h * r, w * r, C))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    B, H, W, C = x.shape
    if H % r or W % r:
        raise ShapeError(f"pixel_unshuffle: extents {H}x{W} not divisible by {r}")
    y = T.reshape(x, (B, H // r, r, W // r, r, C))
    y = T.permute(y, (0, 1, 3, 5, 2, 4))
    return T.reshape(y, (B, H // r, W // r, C * r * r))


def upscale_head(lr: Tensor, P, cfg: UNetConfig) -> Tensor:
    if cfg.scale not in (2, 4):
        raise ValueError(f"unsupported scale {cfg.scale}")
    return pixel_shuffle(T.conv2d(lr, P["head.conv.w"], P["head.conv.b"]), cfg.scale)


def patch_embed(x: Tensor, P, cfg: UNetConfig) -> Tensor:
    p = cfg.patch_size
    if x.shape[1] % p or x.shape[2] % p:
        raise ShapeError(f"patch_embed: extents {x.shape[1]}x{x.shape[2]} not divisible by patch size {p}")
    return T.conv2d(x, P["embed.w"], P["embed.b"], stride=p, padding=0)


def merge_neighbourhoods(x: Tensor) -> Tensor:
    """(B, H, W, C) -> (B, H/2, W/2, 4C), concatenating (0,0), (0,1), (1,0), (1,1)."""
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"patch_merge: odd extents {H}x{W}")
    y = T.reshape(x, (B, H // 2, 2, W // 2, 2, C))
    y = T.permute(y, (0, 1, 3, 2, 4, 5))
    return T.reshape(y, (B, H // 2, W // 2, 4 * C))


def patch_merge(x: Tensor, P, prefix: str) -> Tensor:
    y = merge_neighbourhoods(x)
    y = T.layer_norm(y, P[prefix + "norm.w"], P[prefix + "norm.b"])
    return T.linear(y, P[prefix + "lin.w"])


def patch_expand(x: Tensor, w: Tensor, r: int = 2) -> Tensor:
    """Linear C_in -> r*r*C_out, then pixel shuffle by ``r``."""
    return pixel_shuffle(T.linear(x, w), r)


def block_ssm_params(P, prefix: str, cfg: UNetConfig):
    def one(sp):
        return SSMParams(**{k: P[prefix + sp + k] for k in ("a_log", "d_skip", "w_delta", "b_delta", "w_b", "w_c")})

    if cfg.per_direction_params:
        return [one(f"ssm{i}.") for i in range(N_DIRECTIONS)]
    return one("ssm.")


def vision_mamba_block(x: Tensor, P, prefix: str, cfg: UNetConfig, training: bool,
                       rng: np.random.Generator | None = None) -> Tensor:
    u = T.layer_norm(x, P[prefix + "norm1.w"], P[prefix + "norm1.b"])
    path_a = T.linear(u, P[prefix + "in_a.w"], P[prefix + "in_a.b"])
    path_b = T.linear(u, P[prefix + "in_b.w"], P[prefix + "in_b.b"])
    path_b = T.silu(T.depthwise_conv2d(path_b, P[prefix + "dw.w"], P[prefix + "dw.b"]))
    path_b = iss2d_forward(path_b, block_ssm_params(P, prefix, cfg), P[prefix + "fusion.logits"],
                           chunk=cfg.scan_chunk, use_d_skip=cfg.use_d_skip)
    path_b = T.layer_norm(path_b, P[prefix + "norm2.w"], P[prefix + "norm2.b"])
    out = T.linear(T.mul(T.silu(path_a), path_b), P[prefix + "out.w"], P[prefix + "out.b"])
    return T.add(x, T.dropout(out, cfg.dropout, training, rng))


def check_input(lr_shape, cfg: UNetConfig) -> None:
    if len(lr_shape) != 4 or lr_shape[3] != 1:
        raise ShapeError(f"forward: expected LR batch (B, h, w, 1), got {tuple(lr_shape)}")
    H, W = lr_shape[1] * cfg.scale, lr_shape[2] * cfg.scale
    if H % cfg.divisor or W % cfg.divisor:
        raise ShapeError(
            f"forward: upscaled extents {H}x{W} must be divisible by {cfg.divisor} "
            f"(patch size {cfg.patch_size} x 2^{N_LEVELS - 1} merges); LR extents must be multiples of "
            f"{cfg.divisor // np.gcd(cfg.divisor, cfg.scale)}"
        )


def forward(lr, P, cfg: UNetConfig, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Super-resolve an LR batch (B, h, w, 1) -> (B, h*s, w*s, 1).

    Inference (``training=False``) clips the result to [0, 1].
    """
    lr_t = lr if isinstance(lr, Tensor) else Tensor(np.asarray(lr), dtype=P["head.conv.w"].dtype)
    check_input(lr_t.shape, cfg)
    ch = cfg.level_channels
    x = upscale_head(lr_t, P, cfg)
    x = patch_embed(x, P, cfg)
    skips = []
    for lvl in range(N_LEVELS - 1):
        for j in range(cfg.blocks_per_level):
            x = vision_mamba_block(x, P, f"enc{lvl}.blk{j}.", cfg, training, rng)
        skips.append(x)
        x = patch_merge(x, P, f"enc{lvl}.merge.")
    for j in range(cfg.blocks_per_level):
        x = vision_mamba_block(x, P, f"bott.blk{j}.", cfg, training, rng)
    for lvl in reversed(range(N_LEVELS - 1)):
        x = patch_expand(x, P[f"dec{lvl}.expand.w"])
        x = T.linear(T.concat([x, skips[lvl]], axis=-1), P[f"dec{lvl}.fuse.w"], P[f"dec{lvl}.fuse.b"])
        assert x.shape[-1] == ch[lvl]
        for j in range(cfg.blocks_per_level):
            x = vision_mamba_block(x, P, f"dec{lvl}.blk{j}.", cfg, training, rng)
    x = patch_expand(x, P["final.expand.w"], cfg.patch_size)
    x = T.conv2d(x, P["final.conv.w"], P["final.conv.b"])
    base = bicubic_upscale(lr_t.data, cfg.scale).astype(x.dtype)
    out = T.add(x, Tensor(base))
    if not training:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out


# --- checkpoints ------------------------------------------------------------------------------

def save_checkpoint(path, P, cfg: UNetConfig, extra: dict | None = None) -> None:
    """Header (magic, version, canonical JSON) followed by named SRT tensors in registry order."""
    header = json.dumps({"config": cfg.to_dict(), "extra": extra or {}}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header)
        f.write(struct.pack("<I", len(P)))
        for name, t in P.items():
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)) + nb)
            f.write(srt.to_bytes(t.data))


def load_checkpoint(path, expect: UNetConfig | None = None):
    """Return (config, params, extra); ``expect`` enforces architectural compatibility."""
    path = Path(path)
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc}") from exc
    with f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen))
        cfg = UNetConfig.from_dict(header["config"])
        (count,) = struct.unpack("<I", f.read(4))
        arrays = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack("<H", f.read(2))
            name = f.read(n).decode()
            arrays[name] = srt.read_from(f)
    if expect is not None:
        ours, theirs = cfg.to_dict(), expect.to_dict()
        arch = [k for k in ours if k not in ("dropout", "use_self_prior", "scan_chunk")]
        diff = [k for k in arch if ours[k] != theirs[k]]
        if diff:
            raise DataError(f"{path}: checkpoint config differs in {diff}")
    specs = param_specs(cfg)
    if [s.name for s in specs] != list(arrays):
        raise DataError(f"{path}: parameter registry does not match its config")
    P = OrderedDict()
    for s in specs:
        a = arrays[s.name]
        if a.shape != s.shape:
            raise DataError(f"{path}: {s.name} has shape {a.shape}, expected {s.shape}")
        P[s.name] = Tensor(a, requires_grad=s.trainable, name=s.name)
    return cfg, P, header.get("extra", {})
