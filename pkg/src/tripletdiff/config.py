"""Run configuration: dataclass sections, presets, INI loading and pre-flight
validation.

Precedence is command-line overrides > config file > preset defaults. Two
presets exist: ``desk`` (the default, sized for one CPU) and ``paper``
(64px base, x4 super-resolution, T=1000, batch 16, 300K iterations; needs
real data and accelerator scale).

Several defaults are engineering choices with no published value behind
them: the noise schedule and its beta range, learning rate, text width,
U-Net widths and depth.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .balance import normalize_mode
from .errors import ConfigError

PRESETS = ("desk", "paper")


@dataclass
class DataSection:
    source: str = "toy"            # toy | cholect50
    root: str = ""                 # dataset directory (labels/ + videos/)
    videos: str = ""               # comma-separated video ids to load; empty = all
    image_size: int = 32           # high-resolution side length (= diffusion.sr_size)
    n_frames: int = 10000
    n_instruments: int = 4
    n_verbs: int = 3
    n_targets: int = 4
    skew: float = 1.2
    noise_level: float = 0.02
    seed: int = 0


@dataclass
class TextSection:
    encoder: str = "learned"       # learned | hash | table
    d: int = 64
    l_max: int = 8
    table: str = ""                # EmbeddingTable file for encoder = table
    hash_seed: int = 0


@dataclass
class BalanceSection:
    mode: str = "instrument"       # uniform | triplet | instrument


@dataclass
class DiffusionSection:
    schedule: str = "linear"
    T: int = 200
    # linear range scaled by 1000/T so that alpha_bar_T is ~3e-5 at T = 200
    beta_start: float = 5e-4
    beta_end: float = 0.1
    base_size: int = 16
    sr_scale: int = 2
    sr_size: int = 32
    base_channels: int = 16
    channel_mults: tuple = (1, 2)
    attention_levels: tuple = (1,)
    num_res_blocks: int = 1
    heads: int = 4
    sr_base_channels: int = 16
    sr_channel_mults: tuple = (1, 2)
    sr_attention_levels: tuple = (1,)
    sr_text_conditioned: bool = True
    base_optimizer: str = "adam"
    sr_optimizer: str = "adam"
    lr: float = 1e-4
    batch_size: int = 32
    steps: int = 20000
    seed: int = 0
    checkpoint_every: int = 2000
    sample_every: int = 5000
    log_every: int = 50
    ema: bool = False
    cfg_dropout: float = 0.0
    guidance: float = 1.0
    cond_aug_noise: float = 0.0


@dataclass
class EvalSection:
    extractor: str = "toy"         # toy | file
    features: str = ""             # feature file for extractor = file
    image_features: str = ""       # image embeddings (CLIP-style plugin export)
    text_embeddings: str = ""      # caption embeddings (CLIP-style plugin export)
    samples_per_triplet: int = 10
    batch_size: int = 256


@dataclass
class RunConfig:
    preset: str = "desk"
    data: DataSection = field(default_factory=DataSection)
    text: TextSection = field(default_factory=TextSection)
    balance: BalanceSection = field(default_factory=BalanceSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def toy(self):
        from .data import ToyWorldConfig
        d = self.data
        return ToyWorldConfig(d.image_size, d.n_instruments, d.n_verbs, d.n_targets, d.skew, d.noise_level, d.seed)

    def validate(self) -> "RunConfig":
        """Cross-field checks run before any data is loaded or compute allocated."""
        d, t, f = self.data, self.text, self.diffusion
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if d.source not in ("toy", "cholect50"):
            raise ConfigError(f"data.source must be 'toy' or 'cholect50', got {d.source!r}")
        if f.base_size * f.sr_scale != f.sr_size:
            raise ConfigError(f"diffusion.base_size ({f.base_size}) x sr_scale ({f.sr_scale}) "
                              f"!= sr_size ({f.sr_size})")
        if d.image_size != f.sr_size:
            raise ConfigError(f"data.image_size ({d.image_size}) must equal diffusion.sr_size ({f.sr_size})")
        if d.source == "toy":
            self.toy()
        if f.sr_scale < 2:
            raise ConfigError("diffusion.sr_scale must be >= 2")
        if t.encoder not in ("learned", "hash", "table"):
            raise ConfigError(f"text.encoder must be learned, hash or table, got {t.encoder!r}")
        if t.encoder == "table" and not t.table:
            raise ConfigError("text.encoder = table needs text.table")
        if t.d < 1 or t.l_max < 1:
            raise ConfigError("text.d and text.l_max must be positive")
        normalize_mode(self.balance.mode)
        if f.schedule not in ("linear", "cosine"):
            raise ConfigError(f"diffusion.schedule must be linear or cosine, got {f.schedule!r}")
        if f.T < 1:
            raise ConfigError("diffusion.T must be >= 1")
        if not (0 < f.beta_start < 1 and 0 < f.beta_end < 1):
            raise ConfigError("diffusion.beta_start and beta_end must lie in (0, 1)")
        for opt in (f.base_optimizer, f.sr_optimizer):
            if opt not in ("adam", "adafactor"):
                raise ConfigError(f"optimizer must be adam or adafactor, got {opt!r}")
        for name in ("lr", "batch_size", "steps", "checkpoint_every", "log_every"):
            if getattr(f, name) <= 0:
                raise ConfigError(f"diffusion.{name} must be positive")
        if not 0 <= f.cfg_dropout < 1:
            raise ConfigError("diffusion.cfg_dropout must lie in [0, 1)")
        if f.cond_aug_noise < 0:
            raise ConfigError("diffusion.cond_aug_noise must be >= 0")
        # instantiating the stage configs runs their own shape checks
        self.denoiser_config("base", vocab_size=0)
        self.denoiser_config("sr", vocab_size=0)
        if self.eval.extractor not in ("toy", "file"):
            raise ConfigError(f"eval.extractor must be toy or file, got {self.eval.extractor!r}")
        if self.eval.extractor == "file" and not self.eval.features:
            raise ConfigError("eval.extractor = file needs eval.features")
        return self

    def denoiser_config(self, stage: str, vocab_size: int):
        from .diffusion.unet import DenoiserConfig
        f, t = self.diffusion, self.text
        if stage == "base":
            return DenoiserConfig(f.base_size, f.base_channels, tuple(f.channel_mults), tuple(f.attention_levels),
                                  f.num_res_blocks, t.d, f.heads, variant="base",
                                  vocab_size=vocab_size if t.encoder == "learned" else 0)
        if stage == "sr":
            return DenoiserConfig(f.sr_size, f.sr_base_channels, tuple(f.sr_channel_mults),
                                  tuple(f.sr_attention_levels), f.num_res_blocks, t.d, f.heads, variant="sr",
                                  sr_scale=f.sr_scale, text_conditioned=f.sr_text_conditioned,
                                  vocab_size=vocab_size if t.encoder == "learned" else 0)
        raise ConfigError(f"stage must be 'base' or 'sr', got {stage!r}")


def preset(name: str) -> RunConfig:
    if name == "desk":
        return RunConfig()
    if name == "paper":
        cfg = RunConfig(preset="paper")
        cfg.data.source = "cholect50"
        cfg.data.image_size = 256
        cfg.diffusion = DiffusionSection(
            T=1000, beta_start=1e-4, beta_end=0.02, base_size=64, sr_scale=4, sr_size=256,
            base_channels=128, channel_mults=(1, 2, 3, 4), attention_levels=(1, 2, 3), num_res_blocks=3,
            heads=8, sr_base_channels=128, sr_channel_mults=(1, 2, 4, 8), sr_attention_levels=(3,),
            base_optimizer="adafactor", sr_optimizer="adam", batch_size=16, steps=300_000,
            checkpoint_every=10_000, sample_every=10_000)
        cfg.text.d = 512
        return cfg
    raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")


def _coerce(value: str, current: Any, where: str):
    try:
        if isinstance(current, bool):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {type(current).__name__}") from None
    return value.strip()


def _sections(cfg: RunConfig) -> dict[str, Any]:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name != "preset"}


def apply(cfg: RunConfig, section: str, key: str, value: str, where: str) -> None:
    sections = _sections(cfg)
    if section not in sections:
        raise ConfigError(f"{where}: unknown section [{section}]")
    obj = sections[section]
    names = {f.name for f in dataclasses.fields(obj)}
    if key not in names:
        raise ConfigError(f"{where}: unknown key {section}.{key}")
    setattr(obj, key, _coerce(value, getattr(obj, key), f"{where}: {section}.{key}"))


def file_preset(path: Path | str) -> str | None:
    parser = configparser.ConfigParser()
    parser.read(path)
    return parser.get("run", "preset", fallback=None)


def load_config(path: Path | str | None = None, overrides: Iterable[str] = (),
                preset_name: str | None = None) -> RunConfig:
    """Build a config from a preset, an optional INI file and ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as e:
            raise ConfigError(f"{path}: cannot read config ({e})") from None
    name = preset_name or parser.get("run", "preset", fallback=None) or "desk"
    cfg = preset(name)
    for section in parser.sections():
        if section == "run":
            extra = set(parser[section]) - {"preset"}
            if extra:
                raise ConfigError(f"{path}: unknown key run.{sorted(extra)[0]}")
            continue
        for key, value in parser[section].items():
            apply(cfg, section, key, value, str(path))
    for item in overrides:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        apply(cfg, section, key, value, "override")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """INI text that :func:`load_config` reads back to an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"preset": cfg.preset}
    for name, obj in _sections(cfg).items():
        parser[name] = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            parser[name][f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
    import io
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
