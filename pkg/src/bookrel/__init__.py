"""Book relationship classification with synthetically generated training books."""

__version__ = "0.1.0"
