"""Text-conditioned cascaded diffusion for surgical action-triplet captions,
with a synthetic triplet world, balancing, and evaluation tooling."""

__version__ = "0.1.0"
