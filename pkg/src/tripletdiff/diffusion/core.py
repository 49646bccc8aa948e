"""Training objective, optimisation step, ancestral sampling and the
base + super-resolution cascade."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ContractError, NumericError
from ..textlang import EmbeddingTable, HashEncoder, TableEncoder, Tokenizer
from .schedule import NoiseSchedule, q_sample
from .unet import Denoiser

log = logging.getLogger(__name__)

ENCODERS = ("learned", "hash", "table")
MAX_ABS = 1e3


def to_model_range(images: np.ndarray) -> torch.Tensor:
    """B x H x W x 3 in [0, 1] -> B x 3 x H x W in [-1, 1]."""
    x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    return (x * 2 - 1).permute(0, 3, 1, 2).contiguous()


def to_image_range(x: torch.Tensor) -> np.ndarray:
    """B x 3 x H x W in [-1, 1] -> B x H x W x 3 in [0, 1]."""
    return ((x.clamp(-1, 1) + 1) / 2).permute(0, 2, 3, 1).detach().cpu().numpy()


@dataclass
class TextPipeline:
    """Turns captions into (tokens, mask) tensors for one denoiser.

    ``learned`` encodings go through the denoiser's trainable token table, so
    gradients reach it; ``hash`` and ``table`` encodings are fixed.
    """

    tokenizer: Tokenizer
    encoder: str = "learned"
    hash_seed: int = 0
    table: EmbeddingTable | None = None
    _fixed: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ContractError(f"unknown text encoder {self.encoder!r}; expected one of {ENCODERS}")
        if self.encoder == "table" and self.table is None:
            raise ContractError("table encoder needs an embedding table")

    def fixed_encoder(self, d: int):
        if self._fixed is None:
            if self.encoder == "hash":
                self._fixed = HashEncoder(self.tokenizer, d, self.hash_seed)
            else:
                self._fixed = TableEncoder(self.table, self.tokenizer.l_max)
        return self._fixed

    def ids(self, captions: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor, list[list[str]]]:
        out = [self.tokenizer.tokenize_verbose(c) for c in captions]
        ids = torch.as_tensor(np.stack([o[0] for o in out]))
        mask = torch.as_tensor(np.stack([o[1] for o in out]))
        return ids, mask, [o[2] for o in out]

    def encode(self, model: Denoiser, captions: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        dtype = next(model.parameters()).dtype
        if self.encoder == "learned":
            ids, mask, _ = self.ids(captions)
            return model.embed_tokens(ids, mask), mask
        enc = self.fixed_encoder(model.config.text_dim)
        embs = [enc.embed(c) for c in captions]
        tokens = torch.as_tensor(np.stack([e.tokens for e in embs]), dtype=dtype)
        mask = torch.as_tensor(np.stack([e.mask for e in embs]))
        return tokens, mask

    def to_json(self) -> dict:
        return {"encoder": self.encoder, "hash_seed": self.hash_seed, "tokenizer": self.tokenizer.to_json()}


def null_text(batch: int, length: int, d: int, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Conditioning used for the unconditional branch of classifier-free guidance:
    a single valid all-zero token."""
    tokens = torch.zeros(batch, length, d, dtype=dtype)
    mask = torch.zeros(batch, length, dtype=torch.bool)
    mask[:, 0] = True
    return tokens, mask


def denoise(model: Denoiser, x_t, t, tokens, mask):
    if model.config.variant != "base":
        raise ContractError("denoise() needs a base-variant denoiser; use sr_denoise()")
    return model(x_t, t, tokens, mask)


def sr_denoise(model: Denoiser, x_t, lowres, t, tokens, mask, unconditioned: bool | None = None):
    if model.config.variant != "sr":
        raise ContractError("sr_denoise() needs a super-resolution denoiser")
    return model(x_t, t, tokens, mask, lowres=lowres, unconditioned=unconditioned)


@dataclass
class DiffusionBatch:
    x0: torch.Tensor                 # B x 3 x H x W in [-1, 1]
    captions: list[str]
    lowres: torch.Tensor | None = None

    def __post_init__(self):
        if self.x0.ndim != 4 or self.x0.shape[1] != 3:
            raise ContractError(f"x0 must be B x 3 x H x W, got {tuple(self.x0.shape)}")
        if len(self.captions) != len(self.x0):
            raise ContractError("one caption per image required")
        if self.lowres is not None:
            b, _, h, w = self.x0.shape
            if self.lowres.shape[:2] != (b, 3) or h % self.lowres.shape[2] or w % self.lowres.shape[3]:
                raise ContractError("low-res batch does not divide the target resolution")


def diffusion_loss(eps_fn: Callable, x0, t, eps, schedule: NoiseSchedule):
    """Mean squared error between the true noise and ``eps_fn(x_t, t)``."""
    x_t = q_sample(x0, t, eps, schedule)
    return F.mse_loss(eps_fn(x_t, t), eps)


@dataclass
class TrainState:
    model: Denoiser
    optimizer: torch.optim.Optimizer
    text: TextPipeline
    generator: torch.Generator
    step: int = 0
    cfg_dropout: float = 0.0
    cond_aug_noise: float = 0.0
    ema: dict | None = None
    ema_decay: float = 0.999
    history: deque = field(default_factory=lambda: deque(maxlen=20))


def make_optimizer(model: Denoiser, name: str = "adam", lr: float = 1e-4) -> torch.optim.Optimizer:
    if name == "adam":
        return torch.optim.Adam(model.parameters(), lr=lr)
    if name == "adafactor":
        return torch.optim.Adafactor(model.parameters(), lr=lr)
    raise ContractError(f"unknown optimizer {name!r}; expected 'adam' or 'adafactor'")


def make_train_state(model: Denoiser, text: TextPipeline, seed: int, optimizer: str = "adam",
                     lr: float = 1e-4, cfg_dropout: float = 0.0, cond_aug_noise: float = 0.0,
                     ema: bool = False) -> TrainState:
    gen = torch.Generator().manual_seed(int(seed))
    state = TrainState(model, make_optimizer(model, optimizer, lr), text, gen,
                       cfg_dropout=cfg_dropout, cond_aug_noise=cond_aug_noise)
    if ema:
        state.ema = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return state


def training_step(state: TrainState, batch: DiffusionBatch, schedule: NoiseSchedule,
                  rng: torch.Generator | None = None) -> tuple[TrainState, float]:
    """One optimiser update on the noise-prediction objective."""
    rng = state.generator if rng is None else rng
    model = state.model
    model.train()
    x0 = batch.x0.to(next(model.parameters()).dtype)
    b = len(x0)
    t = torch.randint(1, schedule.T + 1, (b,), generator=rng)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    tokens, mask = state.text.encode(model, batch.captions)
    if state.cfg_dropout > 0:
        drop = torch.rand(b, generator=rng) < state.cfg_dropout
        nt, nm = null_text(b, tokens.shape[1], tokens.shape[2], tokens.dtype)
        tokens = torch.where(drop[:, None, None], nt, tokens)
        mask = torch.where(drop[:, None], nm, mask)
    lowres = batch.lowres
    if lowres is not None:
        lowres = lowres.to(x0.dtype)
        if state.cond_aug_noise > 0:
            lowres = lowres + state.cond_aug_noise * torch.randn(lowres.shape, generator=rng, dtype=x0.dtype)

    loss = diffusion_loss(lambda x_t, tt: model(x_t, tt, tokens, mask, lowres=lowres), x0, t, eps, schedule)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite loss at step {state.step + 1}; timesteps {t.tolist()}; "
            f"recent losses {list(state.history)}")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    state.history.append(value)
    if state.ema is not None:
        with torch.no_grad():
            for k, v in model.state_dict().items():
                if v.dtype.is_floating_point:
                    state.ema[k].mul_(state.ema_decay).add_(v, alpha=1 - state.ema_decay)
                else:
                    state.ema[k].copy_(v)
    return state, value


@torch.no_grad()
def sample(model: Denoiser, schedule: NoiseSchedule, tokens, mask, rng: torch.Generator,
           lowres=None, guidance: float | None = None, unconditioned: bool | None = None,
           eps_fn: Callable | None = None, trace: list | None = None, clip_x0: bool = True) -> torch.Tensor:
    """Ancestral sampling from pure noise, t = T .. 1, clipped to [-1, 1].

    With ``clip_x0`` each step forms the x0 estimate implied by the predicted
    noise, clips it to the data range and takes the posterior mean
    q(x_{t-1} | x_t, x0); without it the equivalent eps-form mean is used
    unclipped, which lets small eps errors at high noise drift the colours.

    ``guidance`` (classifier-free) mixes conditional and null-text predictions
    as ``uncond + w * (cond - uncond)``; ``None`` or 1 disables it.
    ``eps_fn`` overrides the network (test seam).
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    s = model.config.image_size
    b = tokens.shape[0]
    tokens = tokens.to(dtype)
    if lowres is not None:
        lowres = lowres.to(dtype)

    def predict(x, t):
        tt = torch.full((b,), t, dtype=torch.long)
        if eps_fn is not None:
            return eps_fn(x, tt)
        cond = model(x, tt, tokens, mask, lowres=lowres, unconditioned=unconditioned)
        if guidance is None or guidance == 1.0:
            return cond
        nt, nm = null_text(b, tokens.shape[1], tokens.shape[2], dtype)
        uncond = model(x, tt, nt, nm, lowres=lowres, unconditioned=unconditioned)
        return uncond + guidance * (cond - uncond)

    x = torch.randn((b, 3, s, s), generator=rng, dtype=dtype)
    for t in range(schedule.T, 0, -1):
        eps = predict(x, t)
        i = t - 1
        if clip_x0:
            ab, ab_prev = schedule.alpha_bar[i], schedule.alpha_bar_prev[i]
            x0 = ((x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)).clamp(-1, 1)
            if ab_prev >= 1.0:  # t = 1: the posterior collapses onto x0
                mean = x0
            else:
                mean = (np.sqrt(ab_prev) * schedule.beta[i] / (1.0 - ab)) * x0 \
                    + (np.sqrt(schedule.alpha[i]) * (1.0 - ab_prev) / (1.0 - ab)) * x
        else:
            coef = schedule.beta[i] / np.sqrt(1.0 - schedule.alpha_bar[i])
            mean = (x - coef * eps) / np.sqrt(schedule.alpha[i])
        if t > 1:
            z = torch.randn(x.shape, generator=rng, dtype=dtype)
            x = mean + np.sqrt(schedule.posterior_variance[i]) * z
        else:
            x = mean
        if not torch.isfinite(x).all():
            raise NumericError(f"non-finite sample at step t={t}")
        peak = float(x.abs().max())
        if peak > MAX_ABS:
            raise NumericError(f"sample magnitude {peak:.3g} exceeds {MAX_ABS:g} at step t={t}")
        if trace is not None:
            trace.append(peak)
    return x.clamp(-1, 1)


def sample_captions(model: Denoiser, text: TextPipeline, schedule: NoiseSchedule, captions: Sequence[str],
                    rng: torch.Generator, lowres=None, guidance: float | None = None,
                    batch_size: int = 256, unconditioned: bool | None = None,
                    clip_x0: bool = True) -> torch.Tensor:
    """Sample one image per caption, in chunks; returns NCHW in [-1, 1]."""
    out = []
    with torch.no_grad():
        for s in range(0, len(captions), batch_size):
            chunk = list(captions[s:s + batch_size])
            tokens, mask = text.encode(model, chunk)
            lr = None if lowres is None else lowres[s:s + batch_size]
            out.append(sample(model, schedule, tokens, mask, rng, lowres=lr, guidance=guidance,
                              unconditioned=unconditioned, clip_x0=clip_x0))
    return torch.cat(out)


def check_cascade(base: Denoiser, base_text: TextPipeline, sr: Denoiser, sr_text: TextPipeline) -> None:
    bc, sc = base.config, sr.config
    if bc.variant != "base" or sc.variant != "sr":
        raise ContractError("cascade needs a base denoiser followed by a super-resolution denoiser")
    if bc.text_dim != sc.text_dim:
        raise ContractError(f"text width mismatch: base {bc.text_dim}, sr {sc.text_dim}")
    if sc.lowres_size != bc.image_size:
        raise ContractError(
            f"scale mismatch: sr expects {sc.lowres_size}px input (x{sc.sr_scale}), base emits {bc.image_size}px")
    if base_text.encoder != sr_text.encoder or base_text.tokenizer.words != sr_text.tokenizer.words:
        raise ContractError("stages were trained with different text encoders or vocabularies")


def cascade_generate(base: Denoiser, base_text: TextPipeline, sr: Denoiser, sr_text: TextPipeline,
                     schedules: tuple[NoiseSchedule, NoiseSchedule], captions: str | Sequence[str],
                     rng: torch.Generator, guidance: float | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample low-res images from the captions, then super-resolve them
    conditioned on the same captions."""
    check_cascade(base, base_text, sr, sr_text)
    captions = [captions] if isinstance(captions, str) else list(captions)
    low = sample_captions(base, base_text, schedules[0], captions, rng, guidance=guidance)
    high = sample_captions(sr, sr_text, schedules[1], captions, rng, lowres=low, guidance=guidance)
    return low, high
