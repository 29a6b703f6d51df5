"""Shared text-format conventions for all file interfaces.

Every file the toolkit reads or writes is UTF-8 text, fields separated by
single spaces, `.` as decimal separator, and floats printed at 9 significant
digits so repeated runs diff byte-for-byte.
"""

from __future__ import annotations

from typing import Iterator


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, path: str, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


def fmt_float(x: float) -> str:
    """Canonical float rendering: 9 significant digits."""
    return f"{x:.9g}"


def fmt_float_exact(x: float) -> str:
    """Lossless float rendering (17 significant digits round-trips f64)."""
    return f"{x:.17g}"


def iter_data_lines(text: str) -> Iterator[tuple[int, str]]:
    """Yield (line_no, stripped_line) for non-empty, non-comment lines."""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield line_no, line


def parse_float(token: str, path: str, line_no: int, field: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(path, line_no, f"{field}: not a number: {token!r}") from None


def parse_int(token: str, path: str, line_no: int, field: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(path, line_no, f"{field}: not an integer: {token!r}") from None
