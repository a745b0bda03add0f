"""Single-shot human-object interaction detection with per-verb associative embeddings."""

__version__ = "0.1.0"
