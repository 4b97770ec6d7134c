"""Exception types shared across the package.

The command-line layer maps these onto exit codes: config and file-format
problems exit 2, numerical failures exit 3.
"""


class FormatError(ValueError):
    """A file does not match its documented on-disk format."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or diverged."""
