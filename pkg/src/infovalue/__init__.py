"""Dollar value of textual information: embeddings, return regressions, price impact."""

__version__ = "0.1.0"
