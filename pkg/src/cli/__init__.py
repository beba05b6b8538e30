"""Command-line interface."""

from .commands import COMMANDS, build_parser, load_index, run

__all__ = ['COMMANDS', 'build_parser', 'load_index', 'run']
