"""LoTeNet: hierarchical MPS image classifiers on numpy."""

__version__ = "0.1.0"
