"""Toy-scale RGB-thermal saliency network.

Two swin encoders (one per spectrum) produce four-scale pyramids. The three
shallow scales feed an auxiliary signed-distance head; the deepest scale of
both streams is fused by full attention and decoded back up through
reverse-swin stages (concat skip, project, swin pair, patch separating). The
decoder feature predicts a direction field, which then drives an iterative
warp of the same feature before the saliency head reads both.

All maps are ``(H, W, C)``; there is no batch axis.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Iterator

import numpy as np

from . import kernels as K
from .tensor import Rng, Tensor, no_grad, trunc_normal

FRDF_MODES = ("warp", "additive")
UPSAMPLE_MODES = ("expand", "bilinear")


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 96
    patch_size: int = 4
    embed_dim: int = 16
    window_size: int = 6
    heads: tuple[int, int, int, int] = (2, 2, 2, 2)
    depths: tuple[int, int, int, int] = (1, 1, 1, 1)  # swin block pairs per encoder stage
    mlp_ratio: float = 4.0
    fusion_heads: int = 2
    sdm_channels: int = 32
    decoder_channels: int = 64
    frdf_iterations: int = 5
    frdf_mode: str = "warp"
    final_upsample: str = "expand"  # x4 patch expansion or bilinear interpolation
    field_scale: float = 8.0  # pixels per unit of the direction-field head
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        self.validate()

    @classmethod
    def toy(cls, **overrides) -> "NetConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "NetConfig":
        """384 input, c=128, Swin-B head counts and window 12 (its 384-input window)."""
        base = dict(image_size=384, embed_dim=128, window_size=12, heads=(4, 8, 16, 32), depths=(1, 1, 9, 1), fusion_heads=32)
        base.update(overrides)
        return cls(**base)

    def stage_grid(self, i: int) -> int:
        """Token grid side of encoder stage ``i`` (1-based)."""
        return self.image_size // (self.patch_size * 2 ** (i - 1))

    def stage_dim(self, i: int) -> int:
        return self.embed_dim * 2 ** (i - 1)

    def stage_window(self, i: int) -> tuple[int, int]:
        """(window, shift) for a swin stage; grids no larger than the window attend globally."""
        g = self.stage_grid(i)
        if g <= self.window_size:
            return g, 0
        return self.window_size, self.window_size // 2

    def validate(self) -> None:
        if self.patch_size != 4:
            raise ValueError("patch_size must be 4")
        if self.image_size <= 0 or self.image_size % (self.patch_size * 8):
            raise ValueError(f"image_size {self.image_size} must be a positive multiple of {self.patch_size * 8}")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ValueError("embed_dim must be even and >= 2")
        if len(self.heads) != 4 or len(self.depths) != 4:
            raise ValueError("heads and depths need one entry per encoder stage")
        for i in range(1, 5):
            g = self.stage_grid(i)
            if g > self.window_size and g % self.window_size:
                raise ValueError(f"stage {i} grid {g} is not divisible by window {self.window_size}")
            if self.stage_dim(i) % self.heads[i - 1]:
                raise ValueError(f"stage {i} width {self.stage_dim(i)} not divisible by {self.heads[i - 1]} heads")
            if self.depths[i - 1] < 1:
                raise ValueError("every stage needs at least one block pair")
        if (8 * self.embed_dim) % self.fusion_heads:
            raise ValueError("fusion width 8c must be divisible by fusion_heads")
        if self.frdf_iterations < 0:
            raise ValueError("frdf_iterations must be >= 0")
        if self.frdf_mode not in FRDF_MODES:
            raise ValueError(f"frdf_mode must be one of {FRDF_MODES}")
        if self.final_upsample not in UPSAMPLE_MODES:
            raise ValueError(f"final_upsample must be one of {UPSAMPLE_MODES}")
        if not self.field_scale > 0:
            raise ValueError("field_scale must be positive")

    # INI round trip; one [net] section of key = value lines
    def to_ini(self) -> str:
        lines = ["[net]"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ini(cls, text: str, base: "NetConfig | None" = None) -> "NetConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        section = cp["net"] if cp.has_section("net") else {}
        return (base or cls()).with_overrides(dict(section))

    def with_overrides(self, values: dict) -> "NetConfig":
        kinds = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ValueError(f"unknown net config key {key!r}")
            cur = getattr(self, key)
            if isinstance(raw, str):
                if isinstance(cur, tuple):
                    raw = tuple(int(v) for v in raw.split(","))
                elif isinstance(cur, bool):
                    raw = raw.lower() in ("1", "true", "yes")
                elif isinstance(cur, int):
                    raw = int(raw)
                elif isinstance(cur, float):
                    raw = float(raw)
            parsed[key] = raw
        return replace(self, **parsed)


# -- module plumbing --------------------------------------------------------------


class Init:
    """Parameter factory. ``mode="zeros"`` builds weightless shape-only nets."""

    def __init__(self, rng: Rng | None = None, mode: str = "random"):
        if mode not in ("random", "zeros"):
            raise ValueError(f"unknown init mode {mode!r}")
        self.mode = mode
        self.gen = (rng or Rng()).generator() if mode == "random" else None
        self._zero_buf = np.zeros(0)

    def weight(self, *shape) -> Tensor:
        if self.mode == "zeros":
            # one shared contiguous buffer; stride-0 views would push matmul off BLAS
            n = int(np.prod(shape))
            if self._zero_buf.size < n:
                self._zero_buf = np.zeros(n)
            view = self._zero_buf[:n].reshape(shape)
            view.flags.writeable = False
            return Tensor(view, requires_grad=True)
        return Tensor(trunc_normal(self.gen, shape, std=0.02), requires_grad=True)

    def zeros(self, *shape) -> Tensor:
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(self, *shape) -> Tensor:
        return Tensor(np.ones(shape), requires_grad=True)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, init: Init, bias: bool = True):
        self.weight = init.weight(d_in, d_out)
        self.bias = init.zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return K.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, init: Init, eps: float = 1e-5):
        self.gamma = init.ones(dim)
        self.beta = init.zeros(dim)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return K.layernorm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, init: Init):
        self.fc1 = Linear(dim, hidden, init)
        self.fc2 = Linear(hidden, dim, init)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(K.gelu(self.fc1(x)))


# -- windows --------------------------------------------------------------------


def window_partition(x, ws: int):
    """``(H, W, C) -> (nW, ws*ws, C)``; works on Tensors and ndarrays."""
    H, W, C = x.shape
    if H % ws or W % ws:
        raise K.ShapeError(f"grid {H}x{W} not divisible by window {ws}")
    return x.reshape(H // ws, ws, W // ws, ws, C).transpose(0, 2, 1, 3, 4).reshape(-1, ws * ws, C)


def window_reverse(windows, ws: int, H: int, W: int):
    C = windows.shape[-1]
    return windows.reshape(H // ws, W // ws, ws, ws, C).transpose(0, 2, 1, 3, 4).reshape(H, W, C)


def shifted_window_mask(H: int, W: int, ws: int, shift: int) -> np.ndarray:
    """``(nW, N, N)`` boolean; True where two tokens of a shifted window may attend.

    After the cyclic shift, tokens that came from different sides of the wrap
    seam share a window; they are kept apart.
    """
    region = np.zeros((H, W, 1))
    label = 0
    for hs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
        for wsl in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
            region[hs, wsl] = label
            label += 1
    ids = window_partition(region, ws)[..., 0]
    return ids[:, :, None] == ids[:, None, :]


class WindowAttention(Module):
    def __init__(self, dim: int, heads: int, init: Init):
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, init)
        self.proj = Linear(dim, dim, init)
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        nw, n, c = x.shape
        d = c // self.heads
        qkv = self.qkv(x).reshape(nw, n, 3, self.heads, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = (q @ k.transpose(0, 1, 3, 2)) * (d**-0.5)
        attn = K.softmax(logits, axis=-1, mask=None if mask is None else mask[:, None])
        self.last_weights = attn.data
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(nw, n, c)
        return self.proj(out)


def wmsa(x: Tensor, attn: WindowAttention, ws: int) -> Tensor:
    H, W, _ = x.shape
    return window_reverse(attn(window_partition(x, ws)), ws, H, W)


def swmsa(x: Tensor, attn: WindowAttention, ws: int, shift: int) -> Tensor:
    """Window attention after a cyclic shift of ``shift`` tokens, shifted back afterwards."""
    if shift == 0:
        return wmsa(x, attn, ws)
    H, W, _ = x.shape
    rolled = K.roll2d(x, (-shift, -shift))
    out = attn(window_partition(rolled, ws), shifted_window_mask(H, W, ws, shift))
    return K.roll2d(window_reverse(out, ws, H, W), (shift, shift))


class SwinBlock(Module):
    def __init__(self, dim: int, heads: int, window: int, shift: int, init: Init, mlp_ratio: float = 4.0, eps: float = 1e-5):
        self.window = window
        self.shift = shift
        self.norm1 = LayerNorm(dim, init, eps)
        self.attn = WindowAttention(dim, heads, init)
        self.norm2 = LayerNorm(dim, init, eps)
        self.mlp = MLP(dim, int(dim * mlp_ratio), init)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + swmsa(self.norm1(x), self.attn, self.window, self.shift)
        return x + self.mlp(self.norm2(x))


class STB(Module):
    """A W-MSA block followed by an SW-MSA block, each with its MLP."""

    def __init__(self, dim: int, heads: int, window: int, shift: int, init: Init, mlp_ratio=4.0, eps=1e-5):
        self.regular = SwinBlock(dim, heads, window, 0, init, mlp_ratio, eps)
        self.shifted = SwinBlock(dim, heads, window, shift, init, mlp_ratio, eps)

    def __call__(self, x: Tensor) -> Tensor:
        return self.shifted(self.regular(x))


class SwinStage(Module):
    def __init__(self, dim: int, heads: int, window: int, shift: int, pairs: int, init: Init, mlp_ratio=4.0, eps=1e-5):
        self.blocks = [STB(dim, heads, window, shift, init, mlp_ratio, eps) for _ in range(pairs)]

    def __call__(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


# -- patch ops ---------------------------------------------------------------------


class PatchEmbed(Module):
    """4x4 stride-4 convolution (as a linear map on 4x4 patches) and layer norm."""

    def __init__(self, in_ch: int, dim: int, init: Init, patch: int = 4, eps: float = 1e-5):
        self.patch = patch
        self.proj = Linear(in_ch * patch * patch, dim, init)
        self.norm = LayerNorm(dim, init, eps)

    def __call__(self, img: Tensor) -> Tensor:
        H, W, C = img.shape
        p = self.patch
        patches = img.reshape(H // p, p, W // p, p, C).transpose(0, 2, 1, 3, 4).reshape(H // p, W // p, p * p * C)
        return self.norm(self.proj(patches))


def merge_neighbourhoods(x: Tensor) -> Tensor:
    """``(H, W, C) -> (H/2, W/2, 4C)`` stacking each 2x2 block's channels."""
    H, W, C = x.shape
    if H % 2 or W % 2:
        raise K.ShapeError(f"patch merging needs even dims, got {H}x{W}")
    return x.reshape(H // 2, 2, W // 2, 2, C).transpose(0, 2, 1, 3, 4).reshape(H // 2, W // 2, 4 * C)


def separate_patches(x: Tensor, factor: int = 2) -> Tensor:
    """``(H, W, f*f*C') -> (f*H, f*W, C')``; with ``f=2`` the inverse of :func:`merge_neighbourhoods`."""
    H, W, C = x.shape
    if C % (factor * factor):
        raise K.ShapeError(f"{C} channels cannot split into {factor}x{factor} sub-patches")
    c = C // (factor * factor)
    return x.reshape(H, W, factor, factor, c).transpose(0, 2, 1, 3, 4).reshape(factor * H, factor * W, c)


class PatchMerging(Module):
    def __init__(self, dim: int, init: Init):
        self.reduction = Linear(4 * dim, 2 * dim, init, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        return self.reduction(merge_neighbourhoods(x))


class PatchSeparating(Module):
    """Linear ``C -> 2C`` then each token's channels become a 2x2 block of ``C/2``."""

    def __init__(self, dim: int, init: Init):
        if dim % 2:
            raise K.ShapeError(f"patch separating needs even channels, got {dim}")
        self.expand = Linear(dim, 2 * dim, init, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 2:
            raise K.ShapeError(f"patch separating needs even channels, got {x.shape[-1]}")
        return separate_patches(self.expand(x))


# -- network parts ---------------------------------------------------------------------


class Encoder(Module):
    def __init__(self, cfg: NetConfig, init: Init, in_ch: int = 3):
        self.embed = PatchEmbed(in_ch, cfg.embed_dim, init, cfg.patch_size, cfg.ln_eps)
        self.stages = []
        self.merges = []
        for i in range(1, 5):
            ws, shift = cfg.stage_window(i)
            self.stages.append(
                SwinStage(cfg.stage_dim(i), cfg.heads[i - 1], ws, shift, cfg.depths[i - 1], init, cfg.mlp_ratio, cfg.ln_eps)
            )
            if i < 4:
                self.merges.append(PatchMerging(cfg.stage_dim(i), init))

    def __call__(self, img: Tensor) -> list[Tensor]:
        x = self.stages[0](self.embed(img))
        pyramid = [x]
        for merge, stage in zip(self.merges, self.stages[1:]):
            x = stage(merge(x))
            pyramid.append(x)
        return pyramid


class SDMAM(Module):
    """Signed-distance head on the three shallow scales of both streams."""

    def __init__(self, cfg: NetConfig, init: Init):
        ch = cfg.sdm_channels
        self.reduce = [Linear(2 * cfg.stage_dim(i), ch, init) for i in range(1, 4)]
        self.conv_w = init.weight(3, 3, 3 * ch, 1)
        self.conv_b = init.zeros(1)
        self.last_scales: list[tuple] = []

    def __call__(self, pyr_r: list[Tensor], pyr_t: list[Tensor]) -> Tensor:
        ys = []
        for i in range(3):
            x = K.concat([pyr_r[i], pyr_t[i]], axis=-1)
            y = K.relu(self.reduce[i](x))
            ys.append(K.upsample_bilinear(y, 2**i))
        self.last_scales = [y.shape for y in ys]
        y = K.concat(ys, axis=-1)
        d = K.tanh(K.conv3x3(y, self.conv_w, self.conv_b))
        return K.upsample_bilinear(d, 4)


class FusionAttention(Module):
    """Full scaled dot-product attention over the concatenated deepest features."""

    def __init__(self, cfg: NetConfig, init: Init):
        c_in = 16 * cfg.embed_dim
        c_out = 8 * cfg.embed_dim
        self.heads = cfg.fusion_heads
        self.q = Linear(c_in, c_out, init)
        self.k = Linear(c_in, c_out, init)
        self.v = Linear(c_in, c_out, init)
        self.last_weights: np.ndarray | None = None

    def __call__(self, x4_r: Tensor, x4_t: Tensor) -> Tensor:
        if x4_r.shape != x4_t.shape:
            raise K.ShapeError(f"fusion inputs differ: {x4_r.shape} vs {x4_t.shape}")
        g1, g2, _ = x4_r.shape
        tokens = K.concat([x4_r, x4_t], axis=-1).reshape(g1 * g2, -1)
        n = tokens.shape[0]
        c = self.q.weight.shape[1]
        d = c // self.heads

        def split(t):
            return t.reshape(n, self.heads, d).transpose(1, 0, 2)

        q, k, v = split(self.q(tokens)), split(self.k(tokens)), split(self.v(tokens))
        attn = K.softmax((q @ k.transpose(0, 2, 1)) * (d**-0.5), axis=-1)
        self.last_weights = attn.data
        out = (attn @ v).transpose(1, 0, 2).reshape(g1, g2, c)
        return out


class RSTStage(Module):
    """Concat skip features, project to the stage width, swin pair, patch separating."""

    def __init__(self, width: int, heads: int, window: int, shift: int, init: Init, cfg: NetConfig):
        self.proj = Linear(3 * width, width, init)
        self.stb = STB(width, heads, window, shift, init, cfg.mlp_ratio, cfg.ln_eps)
        self.separate = PatchSeparating(width, init)

    def __call__(self, z: Tensor, skip_r: Tensor, skip_t: Tensor) -> Tensor:
        x = self.proj(K.concat([z, skip_r, skip_t], axis=-1))
        return self.separate(self.stb(x))


class Decoder(Module):
    def __init__(self, cfg: NetConfig, init: Init):
        self.stages = []
        for i in (4, 3, 2):
            ws, shift = cfg.stage_window(i)
            self.stages.append(RSTStage(cfg.stage_dim(i), cfg.heads[i - 1], ws, shift, init, cfg))
        self.scale = cfg.patch_size
        self.upsample = cfg.final_upsample
        width = cfg.decoder_channels * (self.scale**2 if self.upsample == "expand" else 1)
        self.out_proj = Linear(cfg.embed_dim, width, init)

    def __call__(self, z4: Tensor, pyr_r: list[Tensor], pyr_t: list[Tensor]) -> tuple[Tensor, list[Tensor]]:
        z = z4
        states = []
        for stage, i in zip(self.stages, (3, 2, 1)):
            z = stage(z, pyr_r[i], pyr_t[i])
            states.append(z)
        if self.upsample == "expand":
            # each z1 token becomes a 4x4 block of independent 64-channel pixels
            return separate_patches(self.out_proj(z), self.scale), states
        # per-pixel affine and bilinear weights sum to 1, so projecting first is equivalent
        return K.upsample_bilinear(self.out_proj(z), self.scale), states


class FRDF(Module):
    """Iterative feature refinement along the predicted direction field.

    ``warp``: ``z_k(p) = z_{k-1}(p + F(p))`` by bilinear sampling, K times.
    ``additive``: ``z_k = z_{k-1} + P(F)`` with a learned 2 -> C projection ``P``.
    Either way the result is projected to ``2c`` channels.
    """

    def __init__(self, cfg: NetConfig, init: Init):
        self.mode = cfg.frdf_mode
        self.iterations = cfg.frdf_iterations
        if self.mode == "additive":
            self.field_proj = Linear(2, cfg.decoder_channels, init)
        self.out_proj = Linear(cfg.decoder_channels, 2 * cfg.embed_dim, init)

    def refine(self, z: Tensor, field: Tensor, iterations: int | None = None) -> Tensor:
        """The refinement loop alone, before the output projection."""
        if field.shape != z.shape[:2] + (2,):
            raise K.ShapeError(f"FRDF field {field.shape} vs feature {z.shape}")
        steps = self.iterations if iterations is None else iterations
        for _ in range(steps):
            if self.mode == "warp":
                z = K.grid_sample(z, field)
            else:
                z = z + self.field_proj(field)
        return z

    def __call__(self, z: Tensor, field: Tensor) -> Tensor:
        return self.out_proj(self.refine(z, field))


@dataclass
class Outputs:
    saliency: Tensor  # (h, w, 1) in [0, 1]
    sdm: Tensor  # (h, w, 1) in (-1, 1)
    field: Tensor  # (h, w, 2) pixel offsets (fx, fy)
    z: Tensor
    z_star: Tensor
    z4: Tensor
    decoder_states: list[Tensor]
    pyramid_r: list[Tensor]
    pyramid_t: list[Tensor]
    sdm_scales: list[tuple] = field(default_factory=list)

    def shapes(self) -> dict[str, tuple]:
        out = {}
        for i, (xr, xt) in enumerate(zip(self.pyramid_r, self.pyramid_t), start=1):
            out[f"x{i}_r"] = xr.shape
            out[f"x{i}_t"] = xt.shape
        for i, s in enumerate(self.sdm_scales, start=1):
            out[f"y{i}"] = tuple(s)
        out["sdm"] = self.sdm.shape
        out["z4"] = self.z4.shape
        for i, zi in zip((3, 2, 1), self.decoder_states):
            out[f"z{i}"] = zi.shape
        out["z"] = self.z.shape
        out["field"] = self.field.shape
        out["z_star"] = self.z_star.shape
        out["saliency"] = self.saliency.shape
        return out


class PRLNet(Module):
    def __init__(self, cfg: NetConfig = NetConfig(), rng: Rng | None = None, init_mode: str = "random"):
        self.cfg = cfg
        init = Init(rng or Rng(), init_mode)
        self.encoder_r = Encoder(cfg, init)
        self.encoder_t = Encoder(cfg, init)
        self.sdmam = SDMAM(cfg, init)
        self.fusion = FusionAttention(cfg, init)
        self.decoder = Decoder(cfg, init)
        self.df_head = Linear(cfg.decoder_channels, 2, init)
        self.frdf = FRDF(cfg, init)
        self.head = Linear(cfg.decoder_channels + 2 * cfg.embed_dim, 1, init)

    def encode(self, rgb: Tensor, thermal: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        s = self.cfg.image_size
        for name, img in (("rgb", rgb), ("thermal", thermal)):
            if img.shape != (s, s, 3):
                raise K.ShapeError(f"{name} must be ({s}, {s}, 3), got {img.shape}")
        return self.encoder_r(rgb), self.encoder_t(thermal)

    def __call__(self, rgb, thermal) -> Outputs:
        rgb = prepare_image(rgb)
        thermal = prepare_image(thermal)
        pyr_r, pyr_t = self.encode(rgb, thermal)
        sdm = self.sdmam(pyr_r, pyr_t)
        z4 = self.fusion(pyr_r[3], pyr_t[3])
        z, states = self.decoder(z4, pyr_r, pyr_t)
        fld = self.df_head(z) * self.cfg.field_scale
        z_star = self.frdf(z, fld)
        sal = K.sigmoid(self.head(K.concat([z, z_star], axis=-1)))
        return Outputs(sal, sdm, fld, z, z_star, z4, states, pyr_r, pyr_t, list(self.sdmam.last_scales))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def prepare_image(img) -> Tensor:
    """Accept ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` in [0, 1]; single channel is replicated."""
    t = img if isinstance(img, Tensor) else Tensor(img)
    if t.ndim == 2:
        t = t.reshape(*t.shape, 1)
    if t.shape[-1] == 1:
        t = K.concat([t, t, t], axis=-1)
    return t


def expected_shapes(cfg: NetConfig) -> dict[str, tuple]:
    """Dimension chain implied by the architecture, from arithmetic alone."""
    h, c = cfg.image_size, cfg.embed_dim
    out = {}
    for i in range(1, 5):
        g = cfg.stage_grid(i)
        out[f"x{i}_r"] = out[f"x{i}_t"] = (g, g, cfg.stage_dim(i))
    q = h // 4
    for i in range(1, 4):
        out[f"y{i}"] = (q, q, cfg.sdm_channels)
    out["sdm"] = (h, h, 1)
    out["z4"] = (h // 32, h // 32, 8 * c)
    out["z3"] = (h // 16, h // 16, 4 * c)
    out["z2"] = (h // 8, h // 8, 2 * c)
    out["z1"] = (h // 4, h // 4, c)
    out["z"] = (h, h, cfg.decoder_channels)
    out["field"] = (h, h, 2)
    out["z_star"] = (h, h, 2 * c)
    out["saliency"] = (h, h, 1)
    return out


def dry_run(cfg: NetConfig) -> dict[str, tuple]:
    """Run a forward pass with weightless zero parameters and report every shape."""
    net = PRLNet(cfg, init_mode="zeros")
    s = cfg.image_size
    with no_grad():
        out = net(np.zeros((s, s, 3)), np.zeros((s, s, 3)))
    return out.shapes()
