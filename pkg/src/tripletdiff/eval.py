"""Automated evaluation: Fréchet distance between feature Gaussians, CLIP-style
alignment scores, the TripletWorld oracle metric and feature-proximity maps.

Inception/CLIP-class networks are not bundled. Feature extractors and
encoders are small objects with a ``name``, a width ``d`` and a batch
``__call__``; the defaults here work on TripletWorld images, and the
file-backed ones consume vectors exported by external models.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (GRID, ToyWorldConfig, Vocabulary, downsample, oracle_classify_batch, oracle_posterior,
                   oracle_scores, parse_caption, read_image)
from .errors import ContractError, DataError, EvaluationError
from .textlang import EmbeddingTable, project_points

log = logging.getLogger(__name__)

SYM_TOL = 1e-9
EIG_FLOOR = -1e-8
CLAMP_WARN = -1e-5


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    count: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if mu.ndim != 1 or sigma.shape != (len(mu), len(mu)):
            raise ContractError(f"mean {mu.shape} and covariance {sigma.shape} do not match")
        if self.count < 2:
            raise DataError("Gaussian statistics need at least 2 samples")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=SYM_TOL * max(1.0, np.abs(sigma).max())):
            raise ContractError("covariance matrix is not symmetric")
        if len(mu) and np.linalg.eigvalsh((sigma + sigma.T) / 2).min() < EIG_FLOOR * max(1.0, np.abs(sigma).max()):
            raise ContractError("covariance matrix has negative eigenvalues")

    @property
    def d(self) -> int:
        return len(self.mu)


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance of the rows of ``features``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"features must be N x d, got shape {x.shape}")
    if len(x) < 2:
        raise DataError(f"need at least 2 feature vectors, got {len(x)}")
    mu = x.mean(axis=0)
    xc = x - mu
    sigma = xc.T @ xc / (len(x) - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2, len(x))


@dataclass
class StatsAccumulator:
    """Running (count, sum, sum of outer products); shards merge with ``+``."""

    d: int
    count: int = 0
    total: np.ndarray = None
    outer: np.ndarray = None

    def __post_init__(self):
        if self.total is None:
            self.total = np.zeros(self.d)
        if self.outer is None:
            self.outer = np.zeros((self.d, self.d))

    def update(self, features: np.ndarray) -> "StatsAccumulator":
        x = np.asarray(features, dtype=np.float64).reshape(-1, self.d)
        self.count += len(x)
        self.total += x.sum(axis=0)
        self.outer += x.T @ x
        return self

    def __add__(self, other: "StatsAccumulator") -> "StatsAccumulator":
        if other.d != self.d:
            raise ContractError("cannot merge statistics of different widths")
        return StatsAccumulator(self.d, self.count + other.count, self.total + other.total,
                                self.outer + other.outer)

    def finalize(self) -> GaussianStats:
        if self.count < 2:
            raise DataError(f"need at least 2 feature vectors, got {self.count}")
        mu = self.total / self.count
        sigma = (self.outer - self.count * np.outer(mu, mu)) / (self.count - 1)
        return GaussianStats(mu, (sigma + sigma.T) / 2, self.count)


def _psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sigma)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})``.

    The trace of the square root is taken from the eigenvalues of the
    symmetric matrix ``S_a^{1/2} S_b S_a^{1/2}``, which shares its spectrum
    with ``S_a S_b``; negative eigenvalues from round-off are clamped to 0.
    """
    if a.d != b.d:
        raise ContractError(f"feature widths differ: {a.d} vs {b.d}")
    diff = a.mu - b.mu
    root_a = _psd_sqrt(a.sigma)
    m = root_a @ b.sigma @ root_a
    w = np.linalg.eigvalsh((m + m.T) / 2)
    if w.size and w.min() < CLAMP_WARN:
        warnings.warn(f"clamping eigenvalue {w.min():.3g} of the covariance product to 0", RuntimeWarning)
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    fd = diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_sqrt
    return float(max(fd, 0.0))


# --- image inputs and extractors -------------------------------------------

@dataclass
class ImageItem:
    key: str
    array: np.ndarray | None = None
    path: Path | None = None

    def load(self, resolution: int | None = None) -> np.ndarray:
        if self.array is None:
            self.array = read_image(self.path, resolution)
        return self.array


def as_items(images) -> list[ImageItem]:
    """Accept an image stack, a list of arrays, paths, or ready items."""
    if isinstance(images, np.ndarray):
        return [ImageItem(str(i), im) for i, im in enumerate(images)]
    out = []
    for i, im in enumerate(images):
        if isinstance(im, ImageItem):
            out.append(im)
        elif isinstance(im, (str, Path)):
            out.append(ImageItem(str(im), path=Path(im)))
        else:
            out.append(ImageItem(str(i), np.asarray(im)))
    return out


@dataclass
class ToyFeatureExtractor:
    """8 x 8 mean-pooled pixels followed by the oracle's template scores."""

    config: ToyWorldConfig = field(default_factory=ToyWorldConfig)
    name: str = "toy-pool8+oracle"

    @property
    def d(self) -> int:
        ni, nv, nt = self.config.sizes()
        return 8 * 8 * 3 + ni * nv * nt

    def features(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        s = image.shape[0]
        if image.ndim != 3 or image.shape[2] != 3 or image.shape[1] != s or s % GRID:
            raise DataError(f"toy extractor needs square RGB images with side a multiple of {GRID}")
        pooled = downsample(image, s // 8).reshape(-1)
        return np.concatenate([pooled, oracle_scores(image, self.config)[0]])

    def __call__(self, items: Sequence[ImageItem]) -> np.ndarray:
        return _extract(items, self.features, self.d)


@dataclass
class FileFeatureExtractor:
    """Features precomputed by an external network, keyed by image path."""

    table: EmbeddingTable

    @property
    def name(self) -> str:
        return self.table.encoder

    @property
    def d(self) -> int:
        return self.table.d

    def __call__(self, items: Sequence[ImageItem]) -> np.ndarray:
        rows = []
        for it in items:
            for key in (it.key, str(it.path) if it.path else None, it.path.name if it.path else None):
                if key is not None and key in self.table:
                    rows.append(self.table[key])
                    break
            else:
                raise EvaluationError(f"no features for image {it.key!r} in {self.name}")
        return np.stack(rows)


@dataclass
class CommandFeatureExtractor:
    """Runs ``command <image path>`` and parses whitespace-separated floats."""

    command: str
    d: int
    name: str = "external-command"

    def features(self, item: ImageItem) -> np.ndarray:
        if item.path is None:
            raise EvaluationError(f"image {item.key!r} has no file path for {self.name}")
        res = subprocess.run([*shlex.split(self.command), str(item.path)], capture_output=True, text=True)
        if res.returncode:
            raise EvaluationError(f"{self.name} failed on {item.path}: {res.stderr.strip()}")
        return np.array([float(v) for v in res.stdout.split()])

    def __call__(self, items: Sequence[ImageItem]) -> np.ndarray:
        out = []
        for it in items:
            v = self.features(it)
            if v.shape != (self.d,) or not np.all(np.isfinite(v)):
                raise EvaluationError(f"{self.name} returned bad features for {it.key!r}")
            out.append(v)
        return np.stack(out)


def _extract(items: Sequence[ImageItem], fn, d: int) -> np.ndarray:
    out = np.empty((len(items), d))
    for i, it in enumerate(items):
        try:
            v = fn(it.load())
        except Exception as e:  # noqa: BLE001 - any failure is reported per image
            raise EvaluationError(f"feature extraction failed for image {it.key!r}: {e}") from e
        if not np.all(np.isfinite(v)):
            raise EvaluationError(f"non-finite features for image {it.key!r}")
        out[i] = v
    return out


def fid(images_a, images_b, extractor) -> float:
    a, b = as_items(images_a), as_items(images_b)
    if len(a) < 2 or len(b) < 2:
        raise DataError(f"FID needs at least 2 images per side, got {len(a)} and {len(b)}")
    return frechet_distance(gaussian_stats(extractor(a)), gaussian_stats(extractor(b)))


# --- alignment --------------------------------------------------------------

@dataclass
class OracleImageEncoder:
    """Template posterior of the TripletWorld oracle as an image embedding."""

    config: ToyWorldConfig = field(default_factory=ToyWorldConfig)
    name: str = "toy-oracle-posterior"

    @property
    def d(self) -> int:
        ni, nv, nt = self.config.sizes()
        return ni * nv * nt

    def __call__(self, items: Sequence[ImageItem]) -> np.ndarray:
        return _extract(items, lambda im: oracle_posterior(oracle_scores(im, self.config))[0], self.d)


@dataclass
class ToyTextEncoder:
    """One-hot triplet index of a toy-vocabulary caption."""

    vocab: Vocabulary
    name: str = "toy-triplet-onehot"

    @property
    def d(self) -> int:
        ni, nv, nt = self.vocab.sizes()
        return ni * nv * nt

    def __call__(self, captions: Sequence[str]) -> np.ndarray:
        _, nv, nt = self.vocab.sizes()
        out = np.zeros((len(captions), self.d))
        for i, c in enumerate(captions):
            t = parse_caption(c, self.vocab)
            out[i, (t.instrument_id * nv + t.verb_id) * nt + t.target_id] = 1.0
        return out


@dataclass
class TableTextEncoder:
    table: EmbeddingTable

    @property
    def name(self) -> str:
        return self.table.encoder

    @property
    def d(self) -> int:
        return self.table.d

    def __call__(self, captions: Sequence[str]) -> np.ndarray:
        return self.table.matrix(list(captions))


def alignment_score(images, captions: Sequence[str], image_encoder, text_encoder) -> float:
    """100 x mean cosine between paired image and caption embeddings."""
    items = as_items(images)
    if len(items) != len(captions):
        raise DataError(f"{len(items)} images but {len(captions)} captions")
    if image_encoder.d != text_encoder.d:
        raise ContractError(f"encoder widths differ: image {image_encoder.d}, text {text_encoder.d}")
    u, v = image_encoder(items), text_encoder(list(captions))
    nu, nv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
    if np.any(nu == 0) or np.any(nv == 0):
        raise EvaluationError("zero-norm embedding in alignment score")
    cos = np.einsum("ij,ij->i", u, v) / (nu * nv)
    return float(100.0 * cos.mean())


@dataclass
class OracleAlignment:
    instrument: float
    verb: float
    target: float
    triplet: float
    mean_confidence: float
    n: int
    rows: list[dict] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"instrument": self.instrument, "verb": self.verb, "target": self.target,
                "triplet": self.triplet, "mean_confidence": self.mean_confidence, "n": self.n}


def oracle_alignment(generated_images, prompts: Sequence[str], toy_config: ToyWorldConfig) -> OracleAlignment:
    """Per-component agreement between oracle decodings and prompt triplets."""
    vocab = toy_config.vocab()
    items = as_items(generated_images)
    if len(items) != len(prompts):
        raise DataError(f"{len(items)} images but {len(prompts)} prompts")
    if not items:
        raise DataError("no images to score")
    want = [parse_caption(p, vocab) for p in prompts]
    imgs = []
    for it in items:
        try:
            imgs.append(np.asarray(it.load(), dtype=np.float64))
        except Exception as e:  # noqa: BLE001
            raise EvaluationError(f"cannot read image {it.key!r}: {e}") from e
    results = oracle_classify_batch(np.stack(imgs), toy_config)
    hits = np.array([[r.triplet.ids[k] == w.ids[k] for k in range(3)] for r, w in zip(results, want)])
    full = hits.all(axis=1)
    rows = [{"image": it.key, "prompt": p, "decoded": "-".join(map(str, r.triplet.ids)),
             "instrument": int(h[0]), "verb": int(h[1]), "target": int(h[2]), "triplet": int(f),
             "confidence": r.confidence}
            for it, p, r, h, f in zip(items, prompts, results, hits, full)]
    return OracleAlignment(*map(float, hits.mean(axis=0)), float(full.mean()),
                           float(np.mean([r.confidence for r in results])), len(items), rows)


@dataclass
class ProximityMap:
    coords: np.ndarray   # (n_real + n_generated) x 2
    labels: list[str]    # "real" | "generated"
    keys: list[str]

    def centroid_distance(self) -> float:
        lab = np.array(self.labels)
        return float(np.linalg.norm(self.coords[lab == "real"].mean(0) - self.coords[lab == "generated"].mean(0)))

    def mean_spread(self) -> float:
        """Mean distance of points to their own cluster centroid."""
        lab = np.array(self.labels)
        d = []
        for name in ("real", "generated"):
            c = self.coords[lab == name]
            d.append(np.linalg.norm(c - c.mean(0), axis=1))
        return float(np.concatenate(d).mean())


def feature_proximity_map(real_images, generated_images, extractor) -> ProximityMap:
    real, gen = as_items(real_images), as_items(generated_images)
    if not real or not gen:
        raise DataError("feature proximity needs non-empty real and generated sets")
    feats = np.concatenate([extractor(real), extractor(gen)])
    proj = project_points(feats)
    labels = ["real"] * len(real) + ["generated"] * len(gen)
    keys = [it.key for it in real] + [it.key for it in gen]
    return ProximityMap(proj.coords, labels, keys)
