"""Figure rendering for mechworld experiment CSVs."""

__version__ = "0.1.0"
