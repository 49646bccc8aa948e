"""Stage training loop: paired data, resumable checkpoints, loss log and
periodic sample grids.

A checkpoint stores everything needed to continue bit-for-bit: model and
optimiser tensors, the torch noise generator, the numpy batch-sampling
generator, the step counter and the best-so-far loss.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .balance import SamplingPlan, frame_weights, sample_indices
from .checkpoint import (load_checkpoint, read_meta, module_arrays, module_state, optimizer_arrays, optimizer_state,
                         save_checkpoint)
from .config import RunConfig
from .data import Dataset, contact_sheet, downsample, write_image
from .diffusion.core import (DiffusionBatch, TextPipeline, TrainState, make_train_state, sample_captions,
                             to_image_range, to_model_range, training_step)
from .diffusion.schedule import NoiseSchedule, make_schedule
from .diffusion.unet import Denoiser, DenoiserConfig, count_parameters
from .errors import ContractError, FormatError
from .textlang import EmbeddingTable, Tokenizer

log = logging.getLogger(__name__)

STAGES = ("base", "sr")
GRID_PROMPTS = 8


@dataclass
class StageData:
    """Training pairs for one stage, in model range (NCHW, [-1, 1])."""

    x0: torch.Tensor
    captions: list[str]
    plan: SamplingPlan
    lowres: torch.Tensor | None = None

    def batch(self, idx: np.ndarray) -> DiffusionBatch:
        lowres = None if self.lowres is None else self.lowres[idx]
        return DiffusionBatch(self.x0[idx], [self.captions[i] for i in idx], lowres)


def stage_data(dataset: Dataset, cfg: RunConfig, stage: str) -> StageData:
    """Base pairs are (caption, downsampled frame); SR pairs add the
    block-mean low-res frame as conditioning."""
    f = cfg.diffusion
    if dataset.image_size != f.sr_size:
        raise ContractError(f"dataset frames are {dataset.image_size}px but diffusion.sr_size is {f.sr_size}")
    images = dataset.images()
    low = downsample(images, f.sr_scale)
    plan = frame_weights(dataset, cfg.balance.mode)
    if stage == "base":
        return StageData(to_model_range(low), dataset.captions(), plan)
    return StageData(to_model_range(images), dataset.captions(), plan, to_model_range(low))


def schedule_for(cfg: RunConfig) -> NoiseSchedule:
    f = cfg.diffusion
    return make_schedule(f.schedule, f.T, f.beta_start, f.beta_end)


def text_pipeline(cfg: RunConfig, captions) -> TextPipeline:
    t = cfg.text
    tok = Tokenizer.build(captions, t.l_max)
    table = None
    if t.encoder == "table":
        table = EmbeddingTable.read(t.table)
        if table.d != t.d:
            raise ContractError(f"embedding table width {table.d} != text.d {t.d}")
    return TextPipeline(tok, t.encoder, t.hash_seed, table)


def build_state(cfg: RunConfig, stage: str, text: TextPipeline) -> TrainState:
    f = cfg.diffusion
    seed = f.seed * 2 + STAGES.index(stage)
    # initialise from a private generator so weights depend only on the seed
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Denoiser(cfg.denoiser_config(stage, len(text.tokenizer)))
    opt = f.base_optimizer if stage == "base" else f.sr_optimizer
    return make_train_state(model, text, seed=seed, optimizer=opt, lr=f.lr,
                            cfg_dropout=f.cfg_dropout, cond_aug_noise=f.cond_aug_noise, ema=f.ema)


# --- checkpoints ------------------------------------------------------------

def save_stage(path: Path | str, state: TrainState, cfg: RunConfig, stage: str,
               batch_rng: np.random.Generator, best: float) -> Path:
    arrays = module_arrays(state.model.state_dict(), "model")
    opt_arrays, opt_meta = optimizer_arrays(state.optimizer)
    arrays.update(opt_arrays)
    if state.ema is not None:
        arrays.update(module_arrays(state.ema, "ema"))
    arrays["rng/torch"] = state.generator.get_state().numpy()
    f = cfg.diffusion
    meta = {
        "stage": stage,
        "step": state.step,
        "denoiser": state.model.config.to_json(),
        "text": state.text.to_json(),
        "text_table": cfg.text.table if state.text.encoder == "table" else "",
        "schedule": {"kind": f.schedule, "T": f.T, "beta_start": f.beta_start, "beta_end": f.beta_end},
        "balance_mode": cfg.balance.mode,
        "seed": f.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "optimizer": opt_meta,
        "batch_rng": batch_rng.bit_generator.state,
        "history": list(state.history),
        "best_loss": best,
    }
    return save_checkpoint(path, arrays, meta)


@dataclass
class LoadedStage:
    """An immutable snapshot for sampling."""

    model: Denoiser
    text: TextPipeline
    schedule: NoiseSchedule
    meta: dict
    path: Path

    @property
    def stage(self) -> str:
        return self.meta["stage"]


def _text_from_meta(meta: dict) -> TextPipeline:
    t = meta["text"]
    table = EmbeddingTable.read(meta["text_table"]) if t["encoder"] == "table" else None
    return TextPipeline(Tokenizer.from_json(t["tokenizer"]), t["encoder"], t["hash_seed"], table)


def load_stage(path: Path | str, use_ema: bool = False) -> LoadedStage:
    arrays, meta = load_checkpoint(path)
    if meta.get("stage") not in STAGES:
        raise FormatError(f"{path}: checkpoint has no stage record")
    model = Denoiser(DenoiserConfig.from_json(meta["denoiser"]))
    prefix = "ema" if use_ema and any(k.startswith("ema/") for k in arrays) else "model"
    model.load_state_dict(module_state(arrays, prefix))
    model.eval()
    s = meta["schedule"]
    return LoadedStage(model, _text_from_meta(meta), make_schedule(s["kind"], s["T"], s["beta_start"], s["beta_end"]),
                       meta, Path(path))


def resume_state(path: Path | str, cfg: RunConfig, stage: str) -> tuple[TrainState, np.random.Generator, float]:
    arrays, meta = load_checkpoint(path)
    if meta.get("stage") != stage:
        raise ContractError(f"{path}: cannot resume a {meta.get('stage')} checkpoint as stage {stage}")
    text = _text_from_meta(meta)
    state = build_state(cfg, stage, text)
    if state.model.config != DenoiserConfig.from_json(meta["denoiser"]):
        raise ContractError(f"{path}: denoiser config differs from the current run config")
    state.model.load_state_dict(module_state(arrays, "model"))
    state.optimizer.load_state_dict(optimizer_state(arrays, meta["optimizer"]))
    if state.ema is not None:
        state.ema = module_state(arrays, "ema") or state.ema
    state.generator.set_state(torch.from_numpy(arrays["rng/torch"].copy()))
    state.step = int(meta["step"])
    state.history.extend(meta["history"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["batch_rng"]
    return state, rng, float(meta["best_loss"])


# --- loop ---------------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainState
    losses: list[float]
    checkpoints: list[Path] = field(default_factory=list)
    parameters: int = 0


def grid_prompts(data: StageData, n: int = GRID_PROMPTS) -> list[int]:
    """Indices of the first frame of the ``n`` lexicographically first distinct captions."""
    first: dict[str, int] = {}
    for i, c in enumerate(data.captions):
        first.setdefault(c, i)
    return [first[c] for c in sorted(first)[:n]]


def write_sample_grid(path: Path, state: TrainState, data: StageData, schedule: NoiseSchedule,
                      seed: int, guidance: float) -> None:
    idx = grid_prompts(data)
    caps = [data.captions[i] for i in idx]
    lowres = None if data.lowres is None else data.lowres[idx]
    g = torch.Generator().manual_seed(seed)
    images = to_image_range(sample_captions(state.model, state.text, schedule, caps, g, lowres=lowres,
                                            guidance=guidance))
    write_image(path, contact_sheet(images))
    path.with_suffix(".txt").write_text("\n".join(caps) + "\n")


def train_stage(cfg: RunConfig, dataset: Dataset, stage: str, run_dir: Path | str | None = None,
                resume: Path | str | None = None, steps: int | None = None) -> TrainResult:
    """Train one cascade stage. With ``run_dir`` set, writes checkpoints/
    (step_*, last, best), samples/ grids and log.csv; ``resume`` continues
    from a checkpoint of the same stage and config."""
    if stage not in STAGES:
        raise ContractError(f"stage must be one of {STAGES}, got {stage!r}")
    f = cfg.diffusion
    total = f.steps if steps is None else steps
    data = stage_data(dataset, cfg, stage)
    schedule = schedule_for(cfg)
    if resume is not None:
        state, batch_rng, best = resume_state(resume, cfg, stage)
    else:
        state = build_state(cfg, stage, text_pipeline(cfg, dataset.captions()))
        batch_rng = np.random.default_rng([f.seed, STAGES.index(stage)])
        best = float("inf")
    result = TrainResult(state, [], parameters=count_parameters(state.model))

    writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        ckpt_dir, sample_dir = run_dir / "checkpoints", run_dir / "samples"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        sample_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / "log.csv"
        kept = []
        if log_path.exists():
            # keep the other stage's rows, and this stage's rows up to the resume point
            with open(log_path, newline="") as old:
                kept = [r for r in csv.reader(old)][1:]
            kept = [r for r in kept if r[0] != stage or (resume is not None and int(r[1]) <= state.step)]
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["stage", "step", "loss", "lr", "wall_time"])
        writer.writerows(kept)

    t0 = time.perf_counter()
    window: list[float] = []
    since_ckpt: list[float] = []
    try:
        while state.step < total:
            idx = sample_indices(data.plan, batch_rng, f.batch_size)
            state, loss = training_step(state, data.batch(idx), schedule)
            result.losses.append(loss)
            window.append(loss)
            since_ckpt.append(loss)
            step = state.step
            if writer is not None and (step % f.log_every == 0 or step == total):
                lr = state.optimizer.param_groups[0]["lr"]
                writer.writerow([stage, step, f"{np.mean(window):.6g}", f"{lr:.6g}",
                                 f"{time.perf_counter() - t0:.3f}"])
                fh.flush()
                window = []
            if run_dir is None:
                continue
            if step % f.checkpoint_every == 0 or step == total:
                mean = float(np.mean(since_ckpt))
                since_ckpt = []
                improved = mean < best
                best = min(best, mean)
                path = save_stage(ckpt_dir / f"{stage}_step_{step:07d}.ckpt", state, cfg, stage, batch_rng, best)
                save_stage(ckpt_dir / f"{stage}_last.ckpt", state, cfg, stage, batch_rng, best)
                if improved:
                    save_stage(ckpt_dir / f"{stage}_best.ckpt", state, cfg, stage, batch_rng, best)
                result.checkpoints.append(path)
                log.info("%s step %d: mean loss %.5f since last checkpoint", stage, step, mean)
            if f.sample_every > 0 and (step % f.sample_every == 0 or step == total):
                write_sample_grid(sample_dir / f"{stage}_step_{step:07d}.png", state, data, schedule,
                                  seed=f.seed * 1_000_003 + step, guidance=f.guidance)
    finally:
        if writer is not None:
            fh.close()
    return result


def checkpoint_info(path: Path | str) -> dict:
    """Which checkpoint a downstream command used (kind = best | last | step)."""
    path = Path(path)
    meta = read_meta(path)
    kind = "best" if path.stem.endswith("_best") else "last" if path.stem.endswith("_last") else "step"
    return {"path": str(path), "kind": kind, "stage": meta["stage"], "step": meta["step"],
            "config_hash": meta["config_hash"], "best_loss": meta["best_loss"]}
