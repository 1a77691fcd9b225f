"""Reading calibration CSV files.

Two files per dataset: the standards (header ``x,y``) and the readings of
the unknown sample (header ``y0``). In the ``comma`` locale numbers use a
decimal comma and fields are separated by ``;`` (the usual spreadsheet
export in such locales); quoted fields such as ``"0,05"`` with a ``,``
separator are accepted as well.
"""
from __future__ import annotations

import csv
import io
import re
from pathlib import Path

from .data import CalibrationData, validate
from .errors import ParseError

LOCALES = ("point", "comma")

_NUMBER = {
    "point": re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"),
    "comma": re.compile(r"[+-]?(?:\d+(?:,\d*)?|,\d+)(?:[eE][+-]?\d+)?"),
}


def parse_number(text: str, locale: str = "point") -> float:
    """Parse one numeric field; raises ValueError on anything else.

    >>> parse_number("0,05", "comma")
    0.05
    >>> parse_number("1.0e5")
    100000.0
    """
    token = text.strip()
    if not _NUMBER[locale].fullmatch(token):
        raise ValueError(f"not a {locale}-locale number: {text!r}")
    return float(token.replace(",", "."))


def _check_locale(locale):
    if locale not in LOCALES:
        raise ValueError(f"locale must be one of {LOCALES}, got {locale!r}")


def _read_rows(path: Path, header: tuple, locale: str):
    try:
        text = path.read_text(encoding="utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", path=str(path)) from None
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ParseError("file is empty", path=str(path), row=1)

    # a lone column has no separator, so a comma there is always a decimal
    comma_split = len(header) > 1 and ";" not in lines[0]
    delimiter = ";" if locale == "comma" and not comma_split else ","
    reader = csv.reader(io.StringIO("\n".join(lines)), delimiter=delimiter)
    got = tuple(field.strip().lower() for field in next(reader))
    if got != header:
        raise ParseError(
            f"expected header {','.join(header)!r}, got {delimiter.join(got)!r}",
            path=str(path),
            row=1,
        )
    columns = [[] for _ in header]
    for row_no, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            raise ParseError("blank line", path=str(path), row=row_no)
        if len(fields) != len(header):
            raise ParseError(
                f"expected {len(header)} field(s), got {len(fields)}",
                path=str(path),
                row=row_no,
            )
        for col_no, field in enumerate(fields, start=1):
            try:
                columns[col_no - 1].append(parse_number(field, locale))
            except ValueError:
                raise ParseError(
                    f"cannot read {header[col_no - 1]} value {field!r} as a {locale}-locale number",
                    path=str(path),
                    row=row_no,
                    column=col_no,
                ) from None
    return columns


def ingest(first_stage_path, second_stage_path, locale: str = "point") -> CalibrationData:
    """Read and validate a two-file calibration dataset.

    Parameters
    ----------
    first_stage_path, second_stage_path : path-like
        Standards file with header ``x,y`` and unknown-sample file with
        header ``y0``. UTF-8, LF or CRLF line endings.
    locale : {"point", "comma"}
        Decimal separator used in the files.

    Raises
    ------
    ParseError
        Bad header, wrong field count or unreadable number; the message
        carries the file, row and column.
    ValidationError
        Parsed data unusable for calibration (see :func:`ctrlcal.data.validate`).
    """
    _check_locale(locale)
    x, y = _read_rows(Path(first_stage_path), ("x", "y"), locale)
    (y0,) = _read_rows(Path(second_stage_path), ("y0",), locale)
    return validate(CalibrationData(x, y, y0))
