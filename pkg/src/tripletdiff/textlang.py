"""Caption tokenization, text embeddings and embedding-space analyses.

Encoders come in three flavours:

``hash``
    training-free: every word maps to a fixed pseudo-random Gaussian vector
    derived from a seeded hash of the word.
``learned``
    a token table (snapshot of the generator's trainable embedding).
``table``
    externally computed pooled vectors read from an :class:`EmbeddingTable`
    file (e.g. exported from a T5 or SBERT model).
"""

from __future__ import annotations

import hashlib
import logging
import math
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .data import KINDS, Triplet
from .errors import DataError, FormatError, LookupFailure, NumericError

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
DEFAULT_L_MAX = 8
DEFAULT_D = 64
_STRIP = ".,;:!?\"'()"


def split_words(caption: str) -> list[str]:
    words = (w.strip(_STRIP) for w in caption.lower().split())
    return [w for w in words if w]


@dataclass(frozen=True)
class Tokenizer:
    """Word-level vocabulary; ids 0 and 1 are reserved for padding and UNK."""

    words: tuple[str, ...]
    l_max: int = DEFAULT_L_MAX

    @classmethod
    def build(cls, captions: Iterable[str], l_max: int = DEFAULT_L_MAX) -> "Tokenizer":
        seen = sorted({w for c in captions for w in split_words(c)})
        return cls((PAD, UNK, *seen), l_max)

    def __post_init__(self):
        if self.words[:2] != (PAD, UNK):
            raise FormatError("tokenizer vocabulary must start with <pad>, <unk>")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    def tokenize(self, caption: str) -> tuple[np.ndarray, np.ndarray]:
        ids, mask, _ = self.tokenize_verbose(caption)
        return ids, mask

    def tokenize_verbose(self, caption: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Token ids, validity mask, and the out-of-vocabulary words seen."""
        words = split_words(caption)
        if not words:
            raise DataError("cannot tokenize an empty caption")
        if len(words) > self.l_max:
            log.warning("caption %r has %d words; truncated to %d", caption, len(words), self.l_max)
            words = words[: self.l_max]
        ids = np.full(self.l_max, PAD_ID, dtype=np.int64)
        oov = []
        for i, w in enumerate(words):
            ids[i] = self._index.get(w, UNK_ID)
            if ids[i] == UNK_ID:
                oov.append(w)
        mask = np.zeros(self.l_max, dtype=bool)
        mask[: len(words)] = True
        return ids, mask, oov

    def to_json(self) -> dict:
        return {"words": list(self.words), "l_max": self.l_max}

    @classmethod
    def from_json(cls, doc: Mapping) -> "Tokenizer":
        return cls(tuple(doc["words"]), int(doc["l_max"]))


def tokenize(caption: str, tokenizer: Tokenizer) -> tuple[np.ndarray, np.ndarray]:
    return tokenizer.tokenize(caption)


@dataclass
class TextEmbedding:
    tokens: np.ndarray  # L x d
    mask: np.ndarray    # L, bool
    source: str = ""

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.tokens.ndim != 2 or self.mask.shape != (self.tokens.shape[0],):
            raise FormatError(f"embedding tokens {self.tokens.shape} and mask {self.mask.shape} disagree")
        if self.tokens.shape[0] < 1:
            raise FormatError("embedding needs at least one token row")
        if not self.mask.any():
            raise DataError("embedding has no valid tokens")
        if np.any(self.tokens[~self.mask] != 0):
            raise FormatError("masked-out embedding rows must be zero")

    @property
    def d(self) -> int:
        return self.tokens.shape[1]

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


def pool(emb: TextEmbedding) -> np.ndarray:
    """Mean over the valid token rows."""
    if not np.any(emb.mask):
        raise DataError("cannot pool an embedding with every token masked")
    return emb.tokens[emb.mask].mean(axis=0)


class Encoder(Protocol):
    name: str
    d: int

    def embed(self, caption: str) -> TextEmbedding: ...


def _word_seed(word: str, seed: int) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{word}".encode()).digest()[:8], "little")


@dataclass
class HashEncoder:
    """Deterministic, training-free word featurizer."""

    tokenizer: Tokenizer
    d: int = DEFAULT_D
    seed: int = 0
    name: str = "builtin-hash"
    _cache: dict = field(default_factory=dict, repr=False)

    def word_vector(self, word: str) -> np.ndarray:
        v = self._cache.get(word)
        if v is None:
            rng = np.random.default_rng(_word_seed(word, self.seed))
            v = self._cache[word] = rng.standard_normal(self.d) / math.sqrt(self.d)
        return v

    def embed(self, caption: str) -> TextEmbedding:
        ids, mask = self.tokenizer.tokenize(caption)
        tokens = np.zeros((len(ids), self.d))
        for i in np.flatnonzero(mask):
            tokens[i] = self.word_vector(self.tokenizer.words[ids[i]])
        return TextEmbedding(tokens, mask, self.name)


@dataclass
class LearnedEncoder:
    """Read-only view of a trained token table (rows indexed by token id)."""

    tokenizer: Tokenizer
    table: np.ndarray
    name: str = "builtin-learned"

    @property
    def d(self) -> int:
        return self.table.shape[1]

    def embed(self, caption: str) -> TextEmbedding:
        ids, mask = self.tokenizer.tokenize(caption)
        tokens = np.where(mask[:, None], self.table[ids], 0.0)
        return TextEmbedding(tokens, mask, self.name)


@dataclass
class EmbeddingTable:
    """Pooled caption vectors computed outside this package."""

    rows: dict[str, np.ndarray]
    encoder: str = "external"

    def __post_init__(self):
        widths = {np.asarray(v).shape for v in self.rows.values()}
        if len(widths) > 1:
            raise FormatError(f"embedding table rows have mixed shapes {sorted(widths)}")
        for k, v in self.rows.items():
            v = np.asarray(v, dtype=np.float64)
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise FormatError(f"embedding for {k!r} must be a finite vector")
            self.rows[k] = v

    @property
    def d(self) -> int:
        return len(next(iter(self.rows.values()))) if self.rows else 0

    @property
    def captions(self) -> list[str]:
        return list(self.rows)

    def matrix(self, keys: Sequence[str] | None = None) -> np.ndarray:
        keys = self.captions if keys is None else keys
        return np.stack([self[k] for k in keys]) if keys else np.zeros((0, self.d))

    def __getitem__(self, caption: str) -> np.ndarray:
        try:
            return self.rows[caption]
        except KeyError:
            raise LookupFailure(f"caption {caption!r} not in embedding table ({self.encoder})") from None

    def __contains__(self, caption: str) -> bool:
        return caption in self.rows

    def __len__(self):
        return len(self.rows)

    def write(self, path: Path | str) -> None:
        lines = [f"{self.d}\t{self.encoder}"]
        for k, v in self.rows.items():
            if "\t" in k or "\n" in k:
                raise FormatError(f"caption {k!r} contains a tab or newline")
            lines.append(k + "\t" + " ".join(repr(float(x)) for x in v))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path: Path | str) -> "EmbeddingTable":
        """Parse the ``d<TAB>encoder`` header plus ``caption<TAB>floats`` lines."""
        path = Path(path)
        try:
            lines = path.read_text().splitlines()
        except OSError as e:
            raise FormatError(f"{path}: cannot read embedding table ({e})") from None
        if not lines:
            raise FormatError(f"{path}:1: empty file, expected header 'd<TAB>encoder'")
        head = lines[0].split("\t")
        try:
            d = int(head[0])
            encoder = head[1].strip()
        except (ValueError, IndexError):
            raise FormatError(f"{path}:1: bad header {lines[0]!r}, expected 'd<TAB>encoder'") from None
        if d < 1:
            raise FormatError(f"{path}:1: width must be positive")
        rows = {}
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            key, sep, rest = line.partition("\t")
            if not sep:
                raise FormatError(f"{path}:{n}: missing tab between key and values")
            try:
                vec = np.array([float(x) for x in rest.split()])
            except ValueError:
                raise FormatError(f"{path}:{n}: non-numeric value") from None
            if len(vec) != d:
                raise FormatError(f"{path}:{n}: expected {d} values, got {len(vec)}")
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"{path}:{n}: non-finite value")
            if key in rows:
                raise FormatError(f"{path}:{n}: duplicate key {key!r}")
            rows[key] = vec
        return cls(rows, encoder)


@dataclass
class TableEncoder:
    """Adapter exposing an :class:`EmbeddingTable` as a one-token encoder."""

    table: EmbeddingTable
    l_max: int = DEFAULT_L_MAX

    @property
    def name(self) -> str:
        return self.table.encoder

    @property
    def d(self) -> int:
        return self.table.d

    def embed(self, caption: str) -> TextEmbedding:
        tokens = np.zeros((self.l_max, self.d))
        tokens[0] = self.table[caption]
        mask = np.zeros(self.l_max, dtype=bool)
        mask[0] = True
        return TextEmbedding(tokens, mask, self.name)


def embed(caption: str, encoder: Encoder) -> TextEmbedding:
    return encoder.embed(caption)


def embedding_table(captions: Iterable[str], encoder: Encoder) -> EmbeddingTable:
    """Pool ``encoder`` outputs for each distinct caption into a table."""
    rows = {c: pool(encoder.embed(c)) for c in dict.fromkeys(captions)}
    return EmbeddingTable(rows, encoder.name)


# --- analyses -------------------------------------------------------------

def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise NumericError("cosine of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class AlignmentProbe:
    short_caption: str
    long_captions: list[str]
    per_pair_cosines: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.long_captions:
            raise DataError(f"probe {self.short_caption!r} has no long captions")


def load_probes(path: Path | str) -> list[AlignmentProbe]:
    """Read ``[{"short": ..., "long": [...]}, ...]``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: cannot read probe file ({e})") from None
    try:
        return [AlignmentProbe(p["short"], list(p["long"])) for p in doc]
    except (KeyError, TypeError):
        raise FormatError(f"{path}: each probe needs 'short' and 'long' keys") from None


def compute_alignment(probe: AlignmentProbe, encoder: Encoder) -> tuple[float, float]:
    """Mean and population std of cosines between the pooled short caption and
    each pooled long caption. Fills ``probe.per_pair_cosines``."""
    ref = pool(encoder.embed(probe.short_caption))
    probe.per_pair_cosines = [cosine(ref, pool(encoder.embed(c))) for c in probe.long_captions]
    cos = np.array(probe.per_pair_cosines)
    return float(cos.mean()), float(cos.std())


@dataclass
class Projection:
    keys: list[str]
    coords: np.ndarray          # n x 2
    explained: np.ndarray       # variance captured by each axis
    degenerate: bool = False

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {k: (float(x), float(y)) for k, (x, y) in zip(self.keys, self.coords)}


def project_points(points: np.ndarray, keys: Sequence[str] | None = None) -> Projection:
    """Top-2 principal-component coordinates of mean-centred rows.

    Axis signs are fixed so the largest-magnitude loading of each component is
    positive. Inputs with fewer than two non-negligible singular values are
    flagged and get a zero second axis.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise DataError(f"projection needs at least 3 rows, got {x.shape}")
    keys = [str(i) for i in range(len(x))] if keys is None else list(keys)
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = max(xc.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
    comps = np.zeros((2, x.shape[1]))
    for i in range(min(2, rank)):
        v = vt[i]
        comps[i] = v if v[np.argmax(np.abs(v))] >= 0 else -v
    coords = xc @ comps.T
    explained = np.array([(s[i] ** 2 if i < rank else 0.0) for i in range(2)]) / max(len(x) - 1, 1)
    degenerate = rank < 2
    if degenerate:
        log.warning("projection input has rank %d; second axis zeroed", rank)
    return Projection(keys, coords, explained, degenerate)


def project_2d(table: EmbeddingTable) -> Projection:
    return project_points(table.matrix(), table.captions)


def _nearest(x: np.ndarray, keys: Sequence[str], k: int) -> np.ndarray:
    """Indices of the k nearest rows by cosine distance, ties broken by key."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("zero-norm embedding in neighbour search")
    u = x / norms
    dist = 1.0 - u @ u.T
    rank = np.argsort(np.argsort(np.array(keys, dtype=object), kind="stable"), kind="stable")
    out = np.empty((len(x), k), dtype=np.int64)
    for i in range(len(x)):
        order = np.lexsort((rank, dist[i]))
        out[i] = order[order != i][:k]
    return out


def cluster_attribution(table: EmbeddingTable, triplets: Mapping[str, Triplet],
                        k_neighbors: int = 5) -> dict[str, float]:
    """Fraction of each caption's k cosine-nearest neighbours sharing its
    instrument, verb and target, averaged over captions."""
    keys = table.captions
    missing = [k for k in keys if k not in triplets]
    if missing:
        raise LookupFailure(f"no triplet for caption {missing[0]!r}")
    if not 1 <= k_neighbors < len(keys):
        raise DataError(f"k_neighbors must be in [1, {len(keys) - 1}], got {k_neighbors}")
    ids = np.array([triplets[k].ids for k in keys])
    nn = _nearest(table.matrix(keys), keys, k_neighbors)
    same = ids[nn] == ids[:, None, :]  # n x k x 3
    purity = same.mean(axis=(0, 1))
    return {kind: float(p) for kind, p in zip(KINDS, purity)}


def separation(table: EmbeddingTable) -> float:
    """Mean pairwise Euclidean distance between unit-normalised rows."""
    x = table.matrix()
    if len(x) < 2:
        raise DataError("separation needs at least 2 rows")
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    d = np.sqrt(np.maximum(2.0 - 2.0 * u @ u.T, 0.0))
    n = len(x)
    return float(d[np.triu_indices(n, 1)].mean())
