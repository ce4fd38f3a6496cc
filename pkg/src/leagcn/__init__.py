"""Lightweight cross-domain sequential recommendation: single-layer graph
propagation plus an external-attention sequence encoder."""

__version__ = "0.1.0"
