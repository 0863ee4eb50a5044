"""Decentralized heterogeneous multi-robot exploration sandbox."""

__version__ = "0.1.0"
