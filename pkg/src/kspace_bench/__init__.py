"""kspace_bench: synthetic multi-coil dynamic k-space, k-t masks, classical
reconstructors and a challenge-style scoring and ranking pipeline."""

__version__ = "0.1.0"
