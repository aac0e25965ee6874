"""Accountable federated learning: DP agents, an emulated scoring contract and a content-addressed store."""

__version__ = "0.1.0"
