"""scorer-service: conditional-perplexity and embedding sidecar."""

__version__ = "0.1.0"
