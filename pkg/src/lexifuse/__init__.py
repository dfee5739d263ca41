"""Fuse sentiment lexica with heterogeneous label scales into one
three-component polarity representation per word, and evaluate it on
downstream text classification."""

__version__ = "0.1.0"
