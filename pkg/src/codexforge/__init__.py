"""codexforge: illustration extraction, captioning, search, and similarity
graphs for large digitized manuscript collections."""

__version__ = "0.1.0"
