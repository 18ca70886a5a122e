"""Proof-of-authority block production: PBFT ordering with threshold Schnorr block signatures."""

__version__ = "0.1.0"
