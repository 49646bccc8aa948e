"""Text-conditioned attention U-Net noise predictor.

Conditioning follows two routes:

* the pooled caption embedding is projected and added to the timestep
  embedding, and that sum modulates every residual block;
* the full token sequence is attended to by cross-attention blocks at the
  configured resolution levels (and in the bottleneck). Masked tokens get
  zero attention weight.

The super-resolution variant upsamples its low-resolution input bilinearly
and concatenates it with ``x_t`` as extra input channels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, ContractError
from .schedule import timestep_embedding


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 16
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2)
    attention_levels: tuple[int, ...] = (1,)
    num_res_blocks: int = 1
    text_dim: int = 64
    heads: int = 4
    groups: int = 8
    variant: str = "base"           # base | sr
    sr_scale: int = 1
    text_conditioned: bool = True   # False gives the unconditioned SR ablation
    vocab_size: int = 0             # >0 adds a trainable token table

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        object.__setattr__(self, "attention_levels", tuple(self.attention_levels))
        levels = len(self.channel_mults)
        if levels < 1:
            raise ConfigError("need at least one resolution level")
        if self.image_size % (2 ** (levels - 1)):
            raise ConfigError(f"image_size {self.image_size} not divisible by 2^{levels - 1}")
        if not self.attention_levels:
            raise ConfigError("at least one cross-attention level is required")
        if any(not 0 <= a < levels for a in self.attention_levels):
            raise ConfigError(f"attention levels {self.attention_levels} outside 0..{levels - 1}")
        if self.variant not in ("base", "sr"):
            raise ConfigError(f"unknown denoiser variant {self.variant!r}")
        if self.variant == "sr" and self.sr_scale < 2:
            raise ConfigError("super-resolution variant needs sr_scale >= 2")
        if self.variant == "sr" and self.image_size % self.sr_scale:
            raise ConfigError(f"image_size {self.image_size} not divisible by sr_scale {self.sr_scale}")
        for m in self.channel_mults:
            c = self.base_channels * m
            if c % self.groups or c % self.heads:
                raise ConfigError(f"channel count {c} must be divisible by groups and heads")
        if self.base_channels % 2:
            raise ConfigError("base_channels must be even (timestep encoding width)")

    @property
    def lowres_size(self) -> int:
        return self.image_size // self.sr_scale if self.variant == "sr" else self.image_size

    @property
    def emb_dim(self) -> int:
        return 4 * self.base_channels

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "DenoiserConfig":
        return cls(**doc)


def variance_scaling_(conv: nn.Module, scale: float = 1.0) -> None:
    fan_in = conv.weight[0].numel()
    nn.init.normal_(conv.weight, std=math.sqrt(scale / fan_in))
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()
        variance_scaling_(self.conv1)
        variance_scaling_(self.conv2, 1e-2)

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.emb(F.silu(emb))[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Image features (queries) attend over caption tokens (keys/values)."""

    def __init__(self, channels: int, text_dim: int, heads: int, groups: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(groups, channels)
        self.q = nn.Linear(channels, channels)
        self.kv = nn.Linear(text_dim, 2 * channels)
        self.out = nn.Linear(channels, channels)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x, tokens, mask):
        b, c, h, w = x.shape
        q = self.q(self.norm(x).flatten(2).transpose(1, 2))          # b, hw, c
        k, v = self.kv(tokens).chunk(2, dim=-1)                       # b, L, c
        split = lambda a: a.reshape(b, a.shape[1], self.heads, c // self.heads).transpose(1, 2)
        q, k, v = split(q), split(k), split(v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(c // self.heads)  # b, heads, hw, L
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        o = (attn @ v).transpose(1, 2).reshape(b, h * w, c)
        return x + self.out(o).transpose(1, 2).reshape(b, c, h, w)


class Denoiser(nn.Module):
    """Predicts the noise in ``x_t`` (NCHW, values around [-1, 1])."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = cfg = config
        ch = [cfg.base_channels * m for m in cfg.channel_mults]
        e = cfg.emb_dim
        self.time_mlp = nn.Sequential(nn.Linear(cfg.base_channels, e), nn.SiLU(), nn.Linear(e, e))
        self.text_proj = nn.Linear(cfg.text_dim, e)
        self.token_table = nn.Embedding(cfg.vocab_size, cfg.text_dim) if cfg.vocab_size else None
        if self.token_table is not None:
            nn.init.normal_(self.token_table.weight, std=1.0 / math.sqrt(cfg.text_dim))
        # two fixed coordinate channels give the convolutions absolute position
        in_ch = (6 if cfg.variant == "sr" else 3) + 2
        self.conv_in = nn.Conv2d(in_ch, ch[0], 3, padding=1)
        variance_scaling_(self.conv_in)

        def attn(c):
            return CrossAttention(c, cfg.text_dim, cfg.heads, cfg.groups)

        self.down = nn.ModuleList()
        skip_ch, c = [ch[0]], ch[0]
        for lvl, cl in enumerate(ch):
            for _ in range(cfg.num_res_blocks):
                blk = nn.ModuleDict({"res": ResBlock(c, cl, e, cfg.groups)})
                if lvl in cfg.attention_levels:
                    blk["attn"] = attn(cl)
                self.down.append(blk)
                c = cl
                skip_ch.append(c)
            if lvl < len(ch) - 1:
                self.down.append(nn.ModuleDict({"down": nn.Conv2d(c, c, 3, stride=2, padding=1)}))
                skip_ch.append(c)
        self.mid = nn.ModuleDict({"res1": ResBlock(c, c, e, cfg.groups), "attn": attn(c),
                                  "res2": ResBlock(c, c, e, cfg.groups)})
        self.up = nn.ModuleList()
        for lvl in reversed(range(len(ch))):
            cl = ch[lvl]
            for _ in range(cfg.num_res_blocks + 1):
                blk = nn.ModuleDict({"res": ResBlock(c + skip_ch.pop(), cl, e, cfg.groups)})
                if lvl in cfg.attention_levels:
                    blk["attn"] = attn(cl)
                self.up.append(blk)
                c = cl
            if lvl > 0:
                self.up.append(nn.ModuleDict({"up": nn.Conv2d(c, c, 3, padding=1)}))
        self.norm_out = nn.GroupNorm(cfg.groups, c)
        self.conv_out = nn.Conv2d(c, 3, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def embed_tokens(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Look up the trainable token table; masked rows are zero."""
        if self.token_table is None:
            raise ContractError("this denoiser has no token table")
        return self.token_table(ids) * mask[..., None].to(self.token_table.weight.dtype)

    def forward(self, x, t, tokens, mask, lowres=None, unconditioned: bool | None = None):
        cfg = self.config
        if unconditioned is None:
            unconditioned = not cfg.text_conditioned
        self._check(x, t, tokens, mask, lowres)
        t = torch.as_tensor(t, device=x.device).reshape(-1).expand(x.shape[0])
        emb = self.time_mlp(timestep_embedding(t, cfg.base_channels).to(x.dtype))
        if not unconditioned:
            m = mask.to(tokens.dtype)[..., None]
            pooled = (tokens * m).sum(1) / m.sum(1).clamp_min(1.0)
            emb = emb + self.text_proj(pooled)
        if cfg.variant == "sr":
            up = F.interpolate(lowres, size=x.shape[-2:], mode="bilinear", align_corners=False)
            x = torch.cat([x, up], dim=1)
        b, _, hh, ww = x.shape
        ys = torch.linspace(-1, 1, hh, dtype=x.dtype, device=x.device)
        xs = torch.linspace(-1, 1, ww, dtype=x.dtype, device=x.device)
        grid = torch.stack(torch.meshgrid(ys, xs, indexing="ij"))
        x = torch.cat([x, grid.expand(b, 2, hh, ww)], dim=1)

        def block(blk, h):
            h = blk["res"](h, emb)
            if "attn" in blk and not unconditioned:
                h = blk["attn"](h, tokens, mask)
            return h

        h = self.conv_in(x)
        hs = [h]
        for blk in self.down:
            h = blk["down"](h) if "down" in blk else block(blk, h)
            hs.append(h)
        h = self.mid["res1"](h, emb)
        if not unconditioned:
            h = self.mid["attn"](h, tokens, mask)
        h = self.mid["res2"](h, emb)
        for blk in self.up:
            if "up" in blk:
                h = blk["up"](F.interpolate(h, scale_factor=2, mode="nearest"))
            else:
                h = block(blk, torch.cat([h, hs.pop()], dim=1))
        return self.conv_out(F.silu(self.norm_out(h)))

    def _check(self, x, t, tokens, mask, lowres):
        cfg = self.config
        s = cfg.image_size
        if x.ndim != 4 or x.shape[1:] != (3, s, s):
            raise ContractError(f"x_t must be B x 3 x {s} x {s}, got {tuple(x.shape)}")
        b = x.shape[0]
        if tokens.ndim != 3 or tokens.shape[0] != b or tokens.shape[2] != cfg.text_dim:
            raise ContractError(f"text tokens must be {b} x L x {cfg.text_dim}, got {tuple(tokens.shape)}")
        if mask.shape != tokens.shape[:2] or mask.dtype != torch.bool:
            raise ContractError("text mask must be a bool tensor matching the token layout")
        if torch.as_tensor(t).numel() not in (1, b):
            raise ContractError("need one timestep per batch item")
        if cfg.variant == "sr":
            ls = cfg.lowres_size
            if lowres is None or lowres.shape != (b, 3, ls, ls):
                got = None if lowres is None else tuple(lowres.shape)
                raise ContractError(f"low-res input must be {b} x 3 x {ls} x {ls} (scale {cfg.sr_scale}), got {got}")
        elif lowres is not None:
            raise ContractError("base denoiser takes no low-res input")


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
