"""Multi-task graph neural analysis of symbolic music scores."""

__version__ = "0.1.0"
