"""Triplet-annotated image datasets.

Covers three things:

* the dataset model (``Triplet``, ``AnnotatedFrame``, ``Dataset``) and
  CholecT50-style annotation ingestion/export,
* caption construction for triplets and multi-triplet frames,
* TripletWorld, a deterministic synthetic renderer whose images encode
  (instrument, verb, target) as disjoint visual factors, together with an
  inverse-rendering oracle used to score generated images.

Images are float arrays of shape ``H x W x 3`` with values in ``[0, 1]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, LookupFailure

log = logging.getLogger(__name__)

KINDS = ("instrument", "verb", "target")


def _is_null(word: str) -> bool:
    w = word.strip().lower()
    return w in ("", "null") or w.startswith("null_") or w.startswith("null ")


def word_text(word: str) -> str:
    """Caption form of a vocabulary name: lowercase, underscores as spaces."""
    return " ".join(word.replace("_", " ").lower().split())


@dataclass(frozen=True)
class Vocabulary:
    """Three contiguous id -> name maps (position in the tuple is the id)."""

    instruments: tuple[str, ...]
    verbs: tuple[str, ...]
    targets: tuple[str, ...]
    name: str = "vocab"

    def __post_init__(self):
        for kind, words in zip(KINDS, (self.instruments, self.verbs, self.targets)):
            if not words:
                raise FormatError(f"vocabulary has no {kind} entries")
            for w in words:
                if not isinstance(w, str) or not w.strip():
                    raise FormatError(f"empty {kind} name in vocabulary")

    def words(self, kind: str) -> tuple[str, ...]:
        return {"instrument": self.instruments, "verb": self.verbs, "target": self.targets}[kind]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.instruments), len(self.verbs), len(self.targets)

    def word(self, kind: str, idx: int) -> str:
        words = self.words(kind)
        if not 0 <= int(idx) < len(words):
            raise LookupFailure(f"{kind} id {idx} not in vocabulary {self.name!r} (size {len(words)})")
        return words[int(idx)]

    def index(self, kind: str, word: str) -> int:
        words = self.words(kind)
        try:
            return words.index(word)
        except ValueError:
            raise LookupFailure(f"unknown {kind} name {word!r}") from None

    def is_null(self, kind: str, idx: int) -> bool:
        return _is_null(self.word(kind, idx))

    def all_triplets(self) -> list["Triplet"]:
        """Every (instrument, verb, target) combination in lexicographic id order."""
        ni, nv, nt = self.sizes()
        return [Triplet(i, v, t, self.name) for i in range(ni) for v in range(nv) for t in range(nt)]

    def to_json(self) -> dict:
        return {
            kind: {str(i): w for i, w in enumerate(self.words(kind))} for kind in KINDS
        }


@dataclass(frozen=True, order=True)
class Triplet:
    instrument_id: int
    verb_id: int
    target_id: int
    vocabulary_ref: str = field(default="", compare=False)

    @property
    def ids(self) -> tuple[int, int, int]:
        return (self.instrument_id, self.verb_id, self.target_id)

    def validate(self, vocab: Vocabulary) -> "Triplet":
        for kind, idx in zip(KINDS, self.ids):
            vocab.word(kind, idx)
        return self

    def null_flags(self, vocab: Vocabulary) -> tuple[bool, bool]:
        """(verb is null, target is null)."""
        return vocab.is_null("verb", self.verb_id), vocab.is_null("target", self.target_id)


@dataclass
class AnnotatedFrame:
    image: np.ndarray
    triplets: tuple[Triplet, ...]
    frame_id: str
    source_video: str = ""

    def __post_init__(self):
        self.triplets = tuple(self.triplets)
        if len(self.triplets) < 1:
            raise FormatError(f"frame {self.frame_id} has no triplets")
        if len(set(t.ids for t in self.triplets)) != len(self.triplets):
            raise FormatError(f"frame {self.frame_id} has duplicate triplets")
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise FormatError(f"frame {self.frame_id}: image must be HxWx3, got {self.image.shape}")

    @property
    def instruments(self) -> tuple[int, ...]:
        """Distinct instrument ids in annotation order."""
        return tuple(dict.fromkeys(t.instrument_id for t in self.triplets))


@dataclass
class Dataset:
    frames: list[AnnotatedFrame]
    vocab: Vocabulary
    provenance: str = "synthetic"
    # triplet category id -> component ids, as given by the annotation file
    triplet_map: dict[int, tuple[int, int, int]] = field(default_factory=dict)
    dropped: int = 0

    def __post_init__(self):
        if self.provenance not in ("ingested", "synthetic"):
            raise FormatError(f"unknown provenance {self.provenance!r}")
        shapes = {f.image.shape for f in self.frames}
        if len(shapes) > 1:
            raise FormatError(f"frames have mixed image shapes {sorted(shapes)}")
        for f in self.frames:
            for t in f.triplets:
                t.validate(self.vocab)
        if not self.triplet_map:
            self.triplet_map = {k: t.ids for k, t in enumerate(self.vocab.all_triplets())}

    @property
    def n(self) -> int:
        return len(self.frames)

    @property
    def image_size(self) -> int:
        return self.frames[0].image.shape[0] if self.frames else 0

    def captions(self) -> list[str]:
        return [frame_caption(f, self.vocab) for f in self.frames]

    def images(self, dtype=np.float32) -> np.ndarray:
        return np.stack([f.image for f in self.frames]).astype(dtype, copy=False)

    def frame_ids(self) -> list[str]:
        return [f"{f.source_video}/{f.frame_id}" for f in self.frames]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset([self.frames[i] for i in indices], self.vocab, self.provenance,
                       dict(self.triplet_map), 0)


# --- captions -----------------------------------------------------------------

def triplet_caption(triplet: Triplet, vocab: Vocabulary) -> str:
    """``"instrument verb target"`` with null verb/target left out."""
    parts = [word_text(vocab.word("instrument", triplet.instrument_id))]
    for kind, idx in (("verb", triplet.verb_id), ("target", triplet.target_id)):
        w = vocab.word(kind, idx)
        if not _is_null(w):
            parts.append(word_text(w))
    return " ".join(" ".join(parts).split())


def frame_caption(frame: AnnotatedFrame, vocab: Vocabulary) -> str:
    return ". ".join(triplet_caption(t, vocab) for t in frame.triplets)


def caption_index(vocab: Vocabulary) -> dict[str, Triplet]:
    """Map every single-triplet caption of ``vocab`` back to its triplet."""
    out = {}
    for t in vocab.all_triplets():
        out.setdefault(triplet_caption(t, vocab), t)
    return out


def parse_caption(caption: str, vocab: Vocabulary) -> Triplet:
    """Inverse of :func:`triplet_caption` for captions built from ``vocab``."""
    key = " ".join(caption.lower().replace(".", " ").split())
    try:
        return _caption_index_cached(vocab)[key]
    except KeyError:
        raise LookupFailure(f"caption {caption!r} is not a triplet of vocabulary {vocab.name!r}") from None


@lru_cache(maxsize=16)
def _caption_index_cached(vocab: Vocabulary) -> dict[str, Triplet]:
    return caption_index(vocab)


# --- image io ---------------------------------------------------------------

def read_image(path: Path | str, resolution: int | None = None) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if resolution is not None and im.size != (resolution, resolution):
            resample = Image.BOX if min(im.size) >= resolution else Image.BILINEAR
            im = im.resize((resolution, resolution), resample=resample)
        return np.asarray(im, dtype=np.float32) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path: Path | str, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def contact_sheet(images: np.ndarray, ncol: int = 8, pad: int = 1) -> np.ndarray:
    """Tile B x H x W x 3 images into one grid image with white gutters."""
    images = np.asarray(images)
    b, h, w, c = images.shape
    ncol = max(1, min(ncol, b))
    nrow = -(-b // ncol)
    sheet = np.ones((nrow * (h + pad) + pad, ncol * (w + pad) + pad, c), dtype=np.float32)
    for i, im in enumerate(images):
        r, q = divmod(i, ncol)
        y, x = pad + r * (h + pad), pad + q * (w + pad)
        sheet[y:y + h, x:x + w] = im
    return sheet


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling by an integer factor over the two leading axes
    (or axes 1, 2 for a batch)."""
    if factor == 1:
        return image
    if image.ndim == 3:
        h, w, c = image.shape
        return image.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))
    b, h, w, c = image.shape
    return image.reshape(b, h // factor, factor, w // factor, factor, c).mean(axis=(2, 4))


# --- annotation ingestion -------------------------------------------------

def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise FormatError(f"{where}: missing key {key!r}")
    return obj[key]


def _id_map(raw, where: str) -> tuple[str, ...]:
    if not isinstance(raw, dict):
        raise FormatError(f"{where}: expected an id -> name object")
    try:
        items = sorted((int(k), str(v)) for k, v in raw.items())
    except (TypeError, ValueError):
        raise FormatError(f"{where}: ids must be integers") from None
    if [k for k, _ in items] != list(range(len(items))):
        raise FormatError(f"{where}: ids must be contiguous from 0")
    return tuple(v for _, v in items)


def _parse_vocab(doc: dict, where: str) -> tuple[Vocabulary, dict[int, tuple[int, int, int]]]:
    cats = _require(doc, "categories", where)
    maps = {kind: _id_map(_require(cats, kind, f"{where}: categories"), f"{where}: categories.{kind}")
            for kind in KINDS}
    vocab = Vocabulary(maps["instrument"], maps["verb"], maps["target"], name=str(doc.get("vocabulary", "cholect50")))
    raw_triplets = _require(cats, "triplet", f"{where}: categories")
    if not isinstance(raw_triplets, dict):
        raise FormatError(f"{where}: categories.triplet: expected an id -> name object")
    triplet_map = {}
    for k, name in raw_triplets.items():
        parts = [p.strip() for p in str(name).split(",")]
        if len(parts) != 3:
            raise FormatError(f"{where}: categories.triplet[{k}]: expected 'instrument,verb,target', got {name!r}")
        triplet_map[int(k)] = tuple(vocab.index(kind, p) for kind, p in zip(KINDS, parts))
    return vocab, triplet_map


def _frame_path(frames_dir: Path, frame_id: str) -> Path:
    names = []
    if frame_id.isdigit():
        names.append(f"{int(frame_id):06d}")
    names.append(frame_id)
    for stem in names:
        for ext in (".png", ".jpg", ".jpeg"):
            p = frames_dir / f"{stem}{ext}"
            if p.exists():
                return p
    raise FormatError(f"frame {frame_id}: no image file in {frames_dir}")


def load_annotations(annotation_path: Path | str, frames_dir: Path | str, resolution: int) -> Dataset:
    """Load one CholecT50-style per-video annotation file.

    Records under ``annotations[frame_id]`` are either bare triplet ids or
    lists whose first element is the triplet id (the published layout);
    id ``-1`` marks "no triplet". Frames left without any triplet are dropped
    and counted in ``Dataset.dropped``.
    """
    annotation_path = Path(annotation_path)
    where = annotation_path.name
    try:
        doc = json.loads(annotation_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{where}: cannot read annotation file ({e})") from None
    vocab, triplet_map = _parse_vocab(doc, where)
    video = str(doc.get("video", annotation_path.stem))
    records = _require(doc, "annotations", where)
    if not isinstance(records, dict):
        raise FormatError(f"{where}: annotations: expected a frame_id -> records object")

    frames, dropped = [], 0
    for frame_id in sorted(records, key=lambda s: (len(s), s)):
        recs = records[frame_id]
        if not isinstance(recs, list):
            raise FormatError(f"{where}: annotations[{frame_id}]: expected a list")
        ids = []
        for r in recs:
            tid = r[0] if isinstance(r, list) and r else r
            if not isinstance(tid, (int, float)) or isinstance(tid, bool):
                raise FormatError(f"{where}: annotations[{frame_id}]: bad record {r!r}")
            tid = int(tid)
            if tid < 0:
                continue
            if tid not in triplet_map:
                raise LookupFailure(f"frame {frame_id}: triplet id {tid} is not defined in {where}")
            if tid not in ids:
                ids.append(tid)
        if not ids:
            dropped += 1
            continue
        triplets = tuple(Triplet(*triplet_map[t], vocab.name) for t in ids)
        # distinct category ids can still collide on components
        triplets = tuple(dict((t.ids, t) for t in triplets).values())
        image = read_image(_frame_path(Path(frames_dir), str(frame_id)), resolution)
        frames.append(AnnotatedFrame(image, triplets, str(frame_id), video))
    if dropped:
        log.info("%s: dropped %d frames without triplets", where, dropped)
    return Dataset(frames, vocab, "ingested", triplet_map, dropped)


def load_dataset_dir(root: Path | str, resolution: int, videos: Sequence[str] | None = None) -> Dataset:
    """Load ``root/labels/<video>.json`` + ``root/videos/<video>/`` for each video."""
    root = Path(root)
    label_files = sorted((root / "labels").glob("*.json"))
    if videos is not None:
        wanted = set(videos)
        label_files = [p for p in label_files if p.stem in wanted]
    if not label_files:
        raise FormatError(f"{root}: no annotation files under labels/")
    parts = [load_annotations(p, root / "videos" / p.stem, resolution) for p in label_files]
    vocab = parts[0].vocab
    for p, ds in zip(label_files, parts):
        if ds.vocab.sizes() != vocab.sizes() or ds.vocab.to_json() != vocab.to_json():
            raise FormatError(f"{p.name}: vocabulary differs from {label_files[0].name}")
    provenance = "synthetic" if all(
        json.loads(p.read_text()).get("provenance") == "synthetic" for p in label_files) else "ingested"
    frames = [f for ds in parts for f in ds.frames]
    return Dataset(frames, vocab, provenance, dict(parts[0].triplet_map), sum(ds.dropped for ds in parts))


def annotation_document(dataset: Dataset, video: str) -> dict:
    inverse = {v: k for k, v in dataset.triplet_map.items()}
    cats = dataset.vocab.to_json()
    cats["triplet"] = {
        str(k): ",".join(dataset.vocab.word(kind, i) for kind, i in zip(KINDS, ids))
        for k, ids in sorted(dataset.triplet_map.items())
    }
    annotations = {}
    for f in dataset.frames:
        if f.source_video != video:
            continue
        annotations[f.frame_id] = [[inverse[t.ids]] for t in f.triplets]
    return {
        "video": video,
        "vocabulary": dataset.vocab.name,
        "provenance": dataset.provenance,
        "categories": cats,
        "annotations": annotations,
    }


def save_dataset_dir(dataset: Dataset, root: Path | str) -> list[Path]:
    """Write a dataset in the layout :func:`load_dataset_dir` reads."""
    root = Path(root)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    videos = list(dict.fromkeys(f.source_video for f in dataset.frames))
    written = []
    for video in videos:
        vdir = root / "videos" / video
        vdir.mkdir(parents=True, exist_ok=True)
        for f in dataset.frames:
            if f.source_video == video:
                write_image(vdir / f"{f.frame_id}.png", f.image)
        path = root / "labels" / f"{video}.json"
        path.write_text(json.dumps(annotation_document(dataset, video), indent=1, sort_keys=True))
        written.append(path)
    return written


# --- TripletWorld ---------------------------------------------------------

GRID = 16           # layout grid; every render is this layout upsampled
DETAIL_GRID = 32    # fine texture lives on this grid and vanishes at GRID
GLYPH = 6
TEXTURE_AMPLITUDE = 0.12
ORACLE_TAU = 0.1

TOY_INSTRUMENTS = ("grasper", "hook", "clipper", "scissors", "bipolar", "irrigator")
TOY_VERBS = ("dissect", "retract", "clip", "coagulate")
TOY_TARGETS = ("gallbladder", "liver", "cystic_duct", "omentum", "cystic_artery", "peritoneum")

# background colour per target; kept inside [A, 1 - A] so texture never clips
TARGET_COLORS = np.array([
    [0.40, 0.50, 0.18],
    [0.55, 0.15, 0.15],
    [0.18, 0.25, 0.55],
    [0.48, 0.48, 0.48],
    [0.65, 0.30, 0.45],
    [0.20, 0.42, 0.40],
])
INSTRUMENT_COLORS = np.array([
    [1.00, 0.92, 0.20],
    [0.20, 0.95, 1.00],
    [1.00, 0.35, 1.00],
    [1.00, 1.00, 1.00],
    [0.35, 1.00, 0.35],
    [1.00, 0.55, 0.00],
])
_GLYPH_ART = (
    # grasper: ring
    "######|#....#|#....#|#....#|#....#|######",
    # hook: thick L
    "##....|##....|##....|##....|######|######",
    # clipper: plus
    "..##..|..##..|######|######|..##..|..##..",
    # scissors: X
    "##..##|###.##|.####.|.####.|###.##|##..##",
    # bipolar: centred block
    "......|.####.|.####.|.####.|.####.|......",
    # irrigator: two bars
    "##..##|##..##|##..##|##..##|##..##|##..##",
)
GLYPHS = np.array([[[c == "#" for c in row] for row in art.split("|")] for art in _GLYPH_ART])
# glyph top-left corner on the layout grid, per verb
PLACEMENTS = ((1, 1), (1, 9), (9, 1), (9, 9))


def _texture(kind: int, size: int) -> np.ndarray:
    r, c = np.indices((size, size))
    base = [(-1.0) ** r, (-1.0) ** c, (-1.0) ** (r + c)][kind % 3]
    return base if kind < 3 else -base


TEXTURES = np.stack([_texture(k, DETAIL_GRID) for k in range(len(TOY_INSTRUMENTS))])


@dataclass(frozen=True)
class ToyWorldConfig:
    image_size: int = 32
    n_instruments: int = 4
    n_verbs: int = 3
    n_targets: int = 4
    skew: float = 0.0
    noise_level: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.image_size < GRID or self.image_size % GRID:
            raise ConfigError(f"toy image_size must be a multiple of {GRID} and >= {GRID}")
        limits = (len(TOY_INSTRUMENTS), len(TOY_VERBS), len(TOY_TARGETS))
        for name, n, hi in zip(("n_instruments", "n_verbs", "n_targets"), self.sizes(), limits):
            if not 2 <= n <= hi:
                raise ConfigError(f"toy {name} must be in [2, {hi}], got {n}")
        if self.skew < 0:
            raise ConfigError("toy skew must be >= 0")
        if self.noise_level < 0:
            raise ConfigError("toy noise_level must be >= 0")

    def sizes(self) -> tuple[int, int, int]:
        return (self.n_instruments, self.n_verbs, self.n_targets)

    def vocab(self) -> Vocabulary:
        return toy_vocabulary(*self.sizes())


@lru_cache(maxsize=None)
def toy_vocabulary(n_instruments: int = 4, n_verbs: int = 3, n_targets: int = 4) -> Vocabulary:
    return Vocabulary(TOY_INSTRUMENTS[:n_instruments], TOY_VERBS[:n_verbs], TOY_TARGETS[:n_targets],
                      name=f"toy-{n_instruments}x{n_verbs}x{n_targets}")


def placement_box(verb_id: int, size: int = GRID) -> tuple[slice, slice]:
    """Pixel region the glyph occupies for ``verb_id`` at render size ``size``."""
    f = size // GRID
    r, c = PLACEMENTS[verb_id]
    return slice(r * f, (r + GLYPH) * f), slice(c * f, (c + GLYPH) * f)


def _layout(triplet: Triplet) -> tuple[np.ndarray, np.ndarray]:
    """Clean GRID x GRID layout and its background mask."""
    img = np.empty((GRID, GRID, 3))
    img[:] = TARGET_COLORS[triplet.target_id]
    glyph = np.zeros((GRID, GRID), dtype=bool)
    rs, cs = placement_box(triplet.verb_id)
    glyph[rs, cs] = GLYPHS[triplet.instrument_id]
    img[glyph] = INSTRUMENT_COLORS[triplet.instrument_id]
    return img, ~glyph


def _upsample(a: np.ndarray, f: int) -> np.ndarray:
    return a.repeat(f, axis=0).repeat(f, axis=1) if f > 1 else a


def render_clean(triplet: Triplet, size: int) -> np.ndarray:
    layout, background = _layout(triplet)
    img = _upsample(layout, size // GRID)
    if size >= DETAIL_GRID:
        bg = _upsample(background, DETAIL_GRID // GRID)
        tex = np.where(bg, TEXTURE_AMPLITUDE * TEXTURES[triplet.instrument_id], 0.0)
        img = img + _upsample(tex, size // DETAIL_GRID)[..., None]
    return img


def render_toy(triplet: Triplet, seed: int, config: ToyWorldConfig) -> np.ndarray:
    """Render one TripletWorld frame.

    Target picks the background colour, instrument picks the glyph shape and
    colour (plus a fine background texture that only exists at
    ``image_size >= 32`` and averages out exactly under 2x2 pooling), verb
    picks where the glyph sits. Additive Gaussian noise of std
    ``noise_level`` is drawn from ``seed``.
    """
    triplet.validate(config.vocab())
    img = render_clean(triplet, config.image_size)
    if config.noise_level > 0:
        rng = np.random.default_rng(seed)
        img = img + config.noise_level * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class OracleResult:
    triplet: Triplet
    confidence: float
    logits: np.ndarray  # one score per vocabulary triplet, lexicographic order


@lru_cache(maxsize=16)
def _templates(sizes: tuple[int, int, int]) -> tuple[np.ndarray, tuple[Triplet, ...]]:
    triplets = tuple(toy_vocabulary(*sizes).all_triplets())
    return np.stack([render_clean(t, GRID) for t in triplets]), triplets


def _to_grid(images: np.ndarray) -> np.ndarray:
    size = images.shape[1]
    if images.shape[1] != images.shape[2] or size % GRID:
        raise FormatError(f"oracle expects square images with side a multiple of {GRID}, got {images.shape[1:3]}")
    return downsample(images, size // GRID)


def oracle_scores(images: np.ndarray, config: ToyWorldConfig) -> np.ndarray:
    """Per-template fit scores ``-mse / (2 tau^2)`` for a batch (B x n_triplets)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    x = _to_grid(images).reshape(len(images), -1)
    templates, _ = _templates(config.sizes())
    t = templates.reshape(len(templates), -1)
    mse = ((x ** 2).sum(1)[:, None] - 2 * x @ t.T + (t ** 2).sum(1)[None]) / x.shape[1]
    return -np.maximum(mse, 0.0) / (2 * ORACLE_TAU ** 2)


def oracle_posterior(scores: np.ndarray) -> np.ndarray:
    """Template posterior under i.i.d. pixel noise of std ``ORACLE_TAU``."""
    z = scores * (GRID * GRID * 3)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def oracle_classify_batch(images: np.ndarray, config: ToyWorldConfig) -> list[OracleResult]:
    scores = oracle_scores(images, config)
    post = oracle_posterior(scores)
    _, triplets = _templates(config.sizes())
    best = scores.argmax(axis=1)
    out = []
    for b, k in enumerate(best):
        # posterior mass of the winner, discounted by how badly even it fits
        conf = float(post[b, k] * np.exp(scores[b, k]))
        out.append(OracleResult(triplets[k], conf, scores[b]))
    return out


def oracle_classify(image: np.ndarray, config: ToyWorldConfig) -> OracleResult:
    """Nearest-template decoding of a TripletWorld image."""
    return oracle_classify_batch(np.asarray(image)[None], config)[0]


def zipf_probabilities(n: int, skew: float) -> np.ndarray:
    p = np.arange(1, n + 1, dtype=np.float64) ** -float(skew)
    return p / p.sum()


def make_toy_dataset(config: ToyWorldConfig, n_frames: int, video: str = "toy") -> Dataset:
    """Single-triplet frames whose categories follow a Zipf law over the
    lexicographically ordered triplet list."""
    vocab = config.vocab()
    triplets = vocab.all_triplets()
    rng = np.random.default_rng(config.seed)
    cats = rng.choice(len(triplets), size=n_frames, p=zipf_probabilities(len(triplets), config.skew))
    seeds = rng.integers(0, 2**31 - 1, size=n_frames)
    frames = [
        AnnotatedFrame(render_toy(triplets[c], int(s), config).astype(np.float32), (triplets[c],),
                       f"{i:06d}", video)
        for i, (c, s) in enumerate(zip(cats, seeds))
    ]
    return Dataset(frames, vocab, "synthetic")


def triplet_counts(dataset: Dataset) -> dict[tuple[int, int, int], int]:
    counts: dict[tuple[int, int, int], int] = {}
    for f in dataset.frames:
        for t in f.triplets:
            counts[t.ids] = counts.get(t.ids, 0) + 1
    return counts


def imbalance_ratio(dataset: Dataset) -> float:
    """Most over least frequent triplet count (present categories only)."""
    counts = list(triplet_counts(dataset).values())
    return max(counts) / min(counts) if counts else float("nan")

