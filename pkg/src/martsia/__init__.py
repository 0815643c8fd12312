"""Confidential data exchange: multi-authority ABE over a simulated ledger and content store."""

__version__ = "0.1.0"
