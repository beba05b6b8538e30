"""Flat run configuration."""

from .config_loader import ConfigLoader, DEFAULTS

__all__ = ['ConfigLoader', 'DEFAULTS']
