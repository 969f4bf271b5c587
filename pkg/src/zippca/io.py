"""Reading count tables and writing result files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

DELIMITERS = {"comma": ",", "tab": "\t"}


class ParseError(ValidationError):
    """The input file is not a well-formed count table."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


def detect_delimiter(header: str) -> str:
    return "\t" if header.count("\t") > header.count(",") else ","


def read_count_table(path, delimiter: str | None = None):
    """Parse a table whose first row holds taxon ids and first column sample ids.

    Returns (sample_ids, taxon_ids, counts) with counts an int64 array.
    Line and column numbers in errors are 1-based.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("empty file", line=1)
    delim = detect_delimiter(lines[0]) if delimiter is None else DELIMITERS.get(delimiter, delimiter)
    rows = list(csv.reader(lines, delimiter=delim))
    header = rows[0]
    taxa = [h.strip() for h in header[1:]]
    if not taxa:
        raise ParseError("header has no taxon columns", line=1)
    samples, values = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=ln)
        vals = []
        for col, cell in enumerate(row[1:], start=2):
            cell = cell.strip()
            try:
                v = int(cell)
            except ValueError:
                try:
                    fv = float(cell)
                except ValueError:
                    raise ParseError(f"not a number: {cell!r}", ln, col) from None
                if not np.isfinite(fv) or fv != int(fv):
                    raise ParseError(f"not an integer count: {cell!r}", ln, col) from None
                v = int(fv)
            if v < 0:
                raise ParseError(f"negative count {v}", ln, col)
            vals.append(v)
        samples.append(row[0].strip())
        values.append(vals)
    if not values:
        raise ParseError("no data rows", line=2)
    return samples, taxa, np.array(values, dtype=np.int64)


def format_number(v) -> str:
    return f"{float(v):.10g}"


def write_matrix(path, values, row_ids, col_ids, corner: str = "id") -> None:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with open(path, "w", newline="") as fh:
        fh.write(",".join([corner, *col_ids]) + "\n")
        for rid, row in zip(row_ids, values):
            fh.write(",".join([str(rid), *map(format_number, row)]) + "\n")


def write_counts(path, counts, row_ids, col_ids) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["sample", *col_ids]) + "\n")
        for rid, row in zip(row_ids, np.asarray(counts, dtype=np.int64)):
            fh.write(",".join([str(rid), *map(str, row)]) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(obj, dict):
        raise ParseError("config must be a JSON object")
    return obj
