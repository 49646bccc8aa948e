"""Frame sampling plans for class-imbalanced triplet data.

``instrument`` mode weights each frame by the mean inverse frequency of the
distinct instruments it shows, so every instrument receives the same total
sampling mass. ``triplet`` weights by triplet-category inverse frequency and
``uniform`` leaves the data distribution alone.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError

MODES = ("uniform", "triplet", "instrument")
_ALIASES = {"triplet-balanced": "triplet", "instrument-balanced": "instrument"}


def normalize_mode(mode: str) -> str:
    m = _ALIASES.get(mode, mode)
    if m not in MODES:
        raise ConfigError(f"unknown balance mode {mode!r}; expected one of {MODES}")
    return m


def _checksum(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for fid in dataset.frame_ids():
        h.update(fid.encode() + b"\0")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class SamplingPlan:
    mode: str
    frame_weights: np.ndarray
    instrument_counts: dict[int, int]
    frame_checksum: str

    def __post_init__(self):
        w = self.frame_weights
        if w.ndim != 1 or len(w) == 0:
            raise DataError("sampling plan needs a non-empty weight vector")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("sampling weights must be finite and positive")

    @property
    def normalization(self) -> float:
        return float(self.frame_weights.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.frame_weights / self.normalization

    def matches(self, dataset: Dataset) -> bool:
        return len(self.frame_weights) == dataset.n and self.frame_checksum == _checksum(dataset)

    def write_csv(self, path: Path | str, dataset: Dataset) -> None:
        if not self.matches(dataset):
            raise DataError("sampling plan was computed from a different dataset")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_id", "weight", "instruments"])
            for fid, frame, weight in zip(dataset.frame_ids(), dataset.frames, self.frame_weights):
                w.writerow([fid, repr(float(weight)), " ".join(map(str, frame.instruments))])


def instrument_frequencies(dataset: Dataset) -> dict[int, int]:
    """Number of frames in which each instrument appears at least once."""
    if dataset.n == 0:
        raise DataError("cannot count instruments of an empty dataset")
    counts: dict[int, int] = {}
    for f in dataset.frames:
        for i in f.instruments:
            counts[i] = counts.get(i, 0) + 1
    return dict(sorted(counts.items()))


def triplet_frequencies(dataset: Dataset) -> dict[tuple[int, int, int], int]:
    counts: dict[tuple[int, int, int], int] = {}
    for f in dataset.frames:
        for t in f.triplets:
            counts[t.ids] = counts.get(t.ids, 0) + 1
    return counts


def frame_weights(dataset: Dataset, mode: str) -> SamplingPlan:
    mode = normalize_mode(mode)
    inst = instrument_frequencies(dataset)
    if mode == "uniform":
        w = np.ones(dataset.n)
    elif mode == "triplet":
        trip = triplet_frequencies(dataset)
        w = np.array([np.mean([1.0 / trip[t.ids] for t in f.triplets]) for f in dataset.frames])
    else:
        w = np.array([np.mean([1.0 / inst[i] for i in f.instruments]) for f in dataset.frames])
    return SamplingPlan(mode, w, inst, _checksum(dataset))


def sample_indices(plan: SamplingPlan, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` frame indices i.i.d. with replacement, P(i) = w_i / sum(w)."""
    if count < 1:
        raise DataError("sample count must be >= 1")
    cdf = np.cumsum(plan.frame_weights)
    u = rng.random(count) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def instrument_mass(plan: SamplingPlan, dataset: Dataset) -> dict[int, float]:
    """Total normalised sampling probability carried by each instrument's frames
    (a multi-instrument frame splits its mass evenly)."""
    p = plan.probabilities
    out: dict[int, float] = {}
    for pi, f in zip(p, dataset.frames):
        for i in f.instruments:
            out[i] = out.get(i, 0.0) + pi / len(f.instruments)
    return dict(sorted(out.items()))
