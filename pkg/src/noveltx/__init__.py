"""Outcome prediction for unseen treatments via treatment embeddings."""

__version__ = "0.1.0"
