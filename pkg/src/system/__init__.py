"""Error hierarchy and exit codes."""

from .errors import CpNetError, ErrorCategory, ErrorReport, exit_code_for

__all__ = ['CpNetError', 'ErrorCategory', 'ErrorReport', 'exit_code_for']
