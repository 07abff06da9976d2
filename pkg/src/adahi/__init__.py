"""Deviation-gated speculative sampling between an on-device draft policy and a server target policy."""

__version__ = "0.1.0"
