"""Graph aggregation-and-inference network for document-level relation extraction."""

__version__ = "0.1.0"
