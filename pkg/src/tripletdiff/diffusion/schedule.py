"""Noise schedules, closed-form forward corruption and timestep encoding.

Timesteps are 1-indexed: ``t`` runs from 1 to ``T`` and array position
``t - 1`` holds the quantities for step ``t``; ``alpha_bar_0`` is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError, ContractError


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 1:
            raise ConfigError("schedule needs at least one beta")
        if not np.all((beta > 0) & (beta < 1)):
            raise ConfigError("every beta must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "alpha_bar_prev", prev)
        # zero at t = 1 (alpha_bar_prev = 1), also when 1 - alpha_bar_1 underflows
        denom = np.where(prev < 1.0, 1.0 - alpha_bar, 1.0)
        object.__setattr__(self, "posterior_variance", beta * (1.0 - prev) / denom)

    @property
    def T(self) -> int:
        return len(self.beta)

    def params(self) -> dict:
        return {"kind": self.kind, "T": self.T}

    def _index(self, t):
        t_arr = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t)
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise IndexError(f"timestep out of range [1, {self.T}]: {t_arr.min()}..{t_arr.max()}")
        return t_arr.astype(np.int64) - 1

    def at(self, name: str, t, like=None):
        """Gather schedule array ``name`` at timesteps ``t`` (broadcast-ready for
        ``like``, an image batch in NCHW or NHWC)."""
        vals = getattr(self, name)[self._index(t)]
        if isinstance(like, torch.Tensor):
            out = torch.as_tensor(vals, dtype=like.dtype, device=like.device)
            return out.reshape(-1, *([1] * (like.ndim - 1))) if out.ndim else out
        if like is not None and np.ndim(vals):
            return vals.reshape(-1, *([1] * (np.ndim(like) - 1)))
        return vals


def make_schedule(kind: str = "linear", T: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ConfigError(f"schedule length must be a positive integer, got {T!r}")
    if kind == "linear":
        if not (0 < beta_start < 1 and 0 < beta_end < 1):
            raise ConfigError("beta_start and beta_end must lie in (0, 1)")
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        ab = f / f[0]
        beta = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected 'linear' or 'cosine'")
    return NoiseSchedule(beta, kind)


def q_sample_from(x0, alpha_bar, eps):
    """``sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps``."""
    if isinstance(x0, torch.Tensor):
        ab = torch.as_tensor(alpha_bar, dtype=x0.dtype, device=x0.device)
        return ab.sqrt() * x0 + (1 - ab).sqrt() * eps
    ab = np.asarray(alpha_bar, dtype=np.float64)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_sample(x0, t, eps, schedule: NoiseSchedule):
    """Noisy sample ``x_t`` drawn from the closed-form marginal q(x_t | x_0).

    ``t`` is a scalar or one timestep per batch item (leading axis).
    """
    if tuple(np.shape(x0)) != tuple(np.shape(eps)):
        raise ContractError(f"x0 {tuple(np.shape(x0))} and eps {tuple(np.shape(eps))} differ in shape")
    return q_sample_from(x0, schedule.at("alpha_bar", t, like=x0 if np.ndim(t) else None), eps)


def timestep_embedding(t, dim: int):
    """Sinusoidal encoding: ``dim/2`` sines then ``dim/2`` cosines of ``t`` at
    frequencies spaced geometrically from 1 down to 1e-4."""
    if dim % 2 or dim < 2:
        raise ConfigError(f"timestep embedding width must be even and >= 2, got {dim}")
    half = dim // 2
    if isinstance(t, torch.Tensor):
        expo = torch.arange(half, dtype=torch.float64, device=t.device) / max(half - 1, 1)
        freqs = torch.exp(-math.log(1e4) * expo)
        args = t.to(torch.float64).reshape(-1, 1) * freqs
        out = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
        return out if t.ndim else out[0]
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ConfigError("timesteps must be non-negative")
    freqs = np.exp(-math.log(1e4) * np.arange(half) / max(half - 1, 1))
    args = t_arr[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)
