"""Export TripletWorld stand-ins for the file-based encoder plugins.

    python3 scripts/export_toy_plugins.py REAL_DIR GENERATED_DIR OUT_DIR

Writes features.tsv (FID features keyed by image path), image_embeddings.tsv
and text_embeddings.tsv (alignment score), and caption_embeddings.tsv (input
for ``tripletdiff analyze``). Then run, for example:

    tripletdiff evaluate REAL GEN --set eval.extractor=file --set eval.features=OUT/features.tsv \
        --set eval.image_features=OUT/image_embeddings.tsv --set eval.text_embeddings=OUT/text_embeddings.tsv
"""

import argparse
import csv
from pathlib import Path

from tripletdiff.cli import image_files
from tripletdiff.data import ToyWorldConfig, load_dataset_dir, read_image
from tripletdiff.plugins import export_toy_plugins


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("real_dir", type=Path)
    p.add_argument("generated_dir", type=Path)
    p.add_argument("out_dir", type=Path)
    a = p.parse_args()
    real, gen = image_files(a.real_dir), image_files(a.generated_dir)
    with open(a.generated_dir / "samples" / "prompts.csv", newline="") as fh:
        caps = [row["prompt"] for row in csv.DictReader(fh)]
    if (a.real_dir / "labels").is_dir():
        caps += load_dataset_dir(a.real_dir, read_image(real[0]).shape[0]).captions()
    resolution = read_image(gen[0]).shape[0]
    files = export_toy_plugins([*real, *gen], caps, a.out_dir, ToyWorldConfig(), resolution)
    for k, v in files.items():
        print(f"{k}: {v}")


if __name__ == "__main__":
    main()
