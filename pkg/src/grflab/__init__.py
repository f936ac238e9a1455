"""Simulator and verification laboratory for reduced generalized Ricci flow
on principal bundles with nilpotent structure group."""

__version__ = "0.1.0"
