"""inquest: question-tree review engine and evaluation suite."""

__version__ = "0.1.0"
