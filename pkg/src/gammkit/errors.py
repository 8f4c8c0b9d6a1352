"""Exception hierarchy shared across the package.

User-facing tooling maps these onto exit codes: user/data problems
(:class:`DataError` and subclasses) versus numerical failures
(:class:`FitError`).
"""


class GammkitError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GammkitError):
    """Invalid user input: bad files, missing columns, bad options."""


class FormulaError(DataError):
    """Invalid model formula (syntax or semantics)."""


class FormulaSyntaxError(FormulaError):
    """Syntax error with a byte offset and the set of expected tokens."""

    def __init__(self, offset: int, expected: tuple[str, ...], found: str):
        self.offset = offset
        self.expected = tuple(expected)
        self.found = found
        exp = " or ".join(self.expected)
        super().__init__(f"at byte {offset}: expected {exp}, found {found}")


class FitError(GammkitError):
    """Numerical failure while fitting (rank deficiency, degenerate fit)."""
