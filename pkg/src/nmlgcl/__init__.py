"""Graph contrastive learning with a learned negative metric."""

__version__ = "0.1.0"
