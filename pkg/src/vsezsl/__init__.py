"""Part-type embeddings for generalized zero-shot learning with visual-oracle supervision."""

__version__ = "0.1.0"
