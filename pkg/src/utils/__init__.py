"""Seed derivation shared by every random stream."""

from .seeding import derive_seed, substream

__all__ = ['derive_seed', 'substream']
