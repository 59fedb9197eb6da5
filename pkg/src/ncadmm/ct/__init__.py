"""Spectral photon-counting CT: forward model and preconditioned reconstruction."""

from . import forward, recon

__all__ = ["forward", "recon"]
