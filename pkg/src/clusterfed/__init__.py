"""Federated graph-attention recommender simulator with server-side user clustering."""

__version__ = "0.1.0"
