"""Two-stream sequence recognition with reliability-driven decision fusion."""

__version__ = "0.1.0"
