"""Write TripletWorld stand-ins for externally computed encoder outputs.

The file-based evaluation path reads three tables produced outside the
package: image features for FID (keyed by image path), image embeddings and
caption embeddings for the alignment score. These helpers fill them from
the toy extractors so the file path can be exercised end to end without a
pretrained network; a real deployment replaces them with Inception / CLIP /
T5 exports in the same format.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ToyWorldConfig, read_image
from .eval import OracleImageEncoder, ToyFeatureExtractor, ToyTextEncoder, as_items
from .textlang import EmbeddingTable, HashEncoder, Tokenizer, embedding_table, split_words


def _path_table(paths: Sequence[Path], extractor, resolution: int | None, name: str) -> EmbeddingTable:
    items = as_items([read_image(p, resolution) for p in paths])
    feats = extractor(items)
    return EmbeddingTable({str(p): v for p, v in zip(paths, feats)}, name)


def export_toy_plugins(image_paths: Sequence[Path], captions: Sequence[str], out_dir: Path | str,
                       toy: ToyWorldConfig = ToyWorldConfig(), resolution: int | None = None,
                       d_text: int = 64) -> dict[str, Path]:
    """Write features.tsv, image_embeddings.tsv, text_embeddings.tsv and
    caption_embeddings.tsv under ``out_dir``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in image_paths]
    caps = list(dict.fromkeys(captions))
    files = {k: out / f"{k}.tsv" for k in ("features", "image_embeddings", "text_embeddings",
                                            "caption_embeddings")}
    _path_table(paths, ToyFeatureExtractor(toy), resolution, "export:toy-features").write(files["features"])
    _path_table(paths, OracleImageEncoder(toy), resolution, "export:toy-image").write(files["image_embeddings"])
    EmbeddingTable(dict(zip(caps, ToyTextEncoder(toy.vocab())(caps))), "export:toy-text").write(
        files["text_embeddings"])
    tok = Tokenizer.build(caps, max(len(split_words(c)) for c in caps))
    table = embedding_table(caps, HashEncoder(tok, d_text))
    EmbeddingTable(table.rows, "export:caption-hash").write(files["caption_embeddings"])
    return files
