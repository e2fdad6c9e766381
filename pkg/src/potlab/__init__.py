"""Exact optimal transport, penalized-OT autoencoders and numerical checks on toy problems."""

__version__ = "0.1.0"
