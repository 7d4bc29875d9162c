"""Reading and writing matrix-stack data files.

Two on-disk layouts are supported (formats are documented byte-exactly in
docs/formats.md):

* long format: delimited text with a header line naming the four required
  columns ``subject_id``, ``row_id``, ``col_id``, ``value``.  Ids are
  arbitrary strings mapped to contiguous indices in first-appearance order;
  the grid must be complete (every (subject, row, col) triple exactly once).
* stack format: a header line ``N r c`` followed by N blocks of r lines with
  c values each, row-major.  Ids are implicit ("1".."N" and so on).

The delimiter (tab or comma) is detected from the header line; stack-format
value lines additionally accept runs of spaces.  Values are written with
``repr`` so a write/read round trip is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataStack

__all__ = [
    "LoadedStack",
    "load_stack",
    "write_stack_file",
    "read_matrix_file",
    "read_vector_file",
    "read_row_sets",
]

_LONG_HEADER = ("subject_id", "row_id", "col_id", "value")


@dataclass(frozen=True)
class LoadedStack:
    """A parsed data file: the stack plus the id mappings that built it."""

    stack: DataStack
    subject_ids: tuple[str, ...]
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    source_format: str  # "long" or "stack"


def _fail(path, line_no, message):
    raise ValueError(f"{path}:{line_no}: {message}")


def _detect_delimiter(header: str) -> str:
    # Tab wins when present: comma-free TSV headers and tabbed CSV exports
    # both resolve correctly, and mixing the two in one file is rejected
    # later by the field-count check.
    return "\t" if "\t" in header else ","


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def _parse_value(token: str, path, line_no) -> float:
    try:
        value = float(token)
    except ValueError:
        _fail(path, line_no, f"bad numeric value {token!r}")
    if not np.isfinite(value):
        _fail(path, line_no, f"non-finite value {token!r}")
    return value


def load_stack(path: str) -> LoadedStack:
    """Load a data file in either supported format, detected from line 1."""
    lines = _read_lines(path)
    if not lines or not lines[0].strip():
        raise ValueError(f"{path}:1: empty file")
    head_tokens = lines[0].replace(",", " ").replace("\t", " ").split()
    if len(head_tokens) == 3 and all(t.isdigit() for t in head_tokens):
        return _load_stack_format(path, lines)
    return _load_long_format(path, lines)


def _load_stack_format(path, lines) -> LoadedStack:
    n, r, c = (int(t) for t in lines[0].replace(",", " ").replace("\t", " ").split())
    if min(n, r, c) < 1:
        _fail(path, 1, f"header dimensions must be positive, got {n} {r} {c}")
    body = []
    for line_no, raw in enumerate(lines[1:], start=2):
        if raw.strip():
            body.append((line_no, raw))
    if len(body) != n * r:
        raise ValueError(
            f"{path}: expected {n * r} value lines for header '{n} {r} {c}', "
            f"found {len(body)}"
        )
    values = np.empty((n, r, c), dtype=float)
    flat = values.reshape(n * r, c)
    for k, (line_no, raw) in enumerate(body):
        tokens = raw.replace(",", " ").replace("\t", " ").split()
        if len(tokens) != c:
            _fail(path, line_no, f"expected {c} values, found {len(tokens)}")
        for j, tok in enumerate(tokens):
            flat[k, j] = _parse_value(tok, path, line_no)
    return LoadedStack(
        stack=DataStack(values),
        subject_ids=tuple(str(i) for i in range(1, n + 1)),
        row_ids=tuple(str(i) for i in range(1, r + 1)),
        col_ids=tuple(str(i) for i in range(1, c + 1)),
        source_format="stack",
    )


def _load_long_format(path, lines) -> LoadedStack:
    delim = _detect_delimiter(lines[0])
    header = [t.strip() for t in lines[0].split(delim)]
    missing = [name for name in _LONG_HEADER if name not in header]
    if missing:
        _fail(path, 1, f"long-format header must name {', '.join(_LONG_HEADER)}; "
                       f"missing {', '.join(missing)}")
    pos = {name: header.index(name) for name in _LONG_HEADER}
    n_fields = len(header)

    subj_index: dict[str, int] = {}
    row_index: dict[str, int] = {}
    col_index: dict[str, int] = {}
    records = []
    for line_no, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = [t.strip() for t in raw.split(delim)]
        if len(fields) != n_fields:
            _fail(path, line_no, f"expected {n_fields} fields, found {len(fields)}")
        sid = fields[pos["subject_id"]]
        rid = fields[pos["row_id"]]
        cid = fields[pos["col_id"]]
        value = _parse_value(fields[pos["value"]], path, line_no)
        for key, index in ((sid, subj_index), (rid, row_index), (cid, col_index)):
            if key not in index:
                index[key] = len(index)
        records.append((line_no, subj_index[sid], row_index[rid], col_index[cid], value))

    n, r, c = len(subj_index), len(row_index), len(col_index)
    if not records:
        raise ValueError(f"{path}: no data records after the header")
    values = np.full((n, r, c), np.nan)
    for line_no, i, a, b, value in records:
        if not np.isnan(values[i, a, b]):
            _fail(path, line_no, "duplicate (subject_id, row_id, col_id) triple")
        values[i, a, b] = value
    holes = int(np.isnan(values).sum())
    if holes:
        raise ValueError(
            f"{path}: incomplete grid: {holes} of {n * r * c} "
            f"(subject, row, col) cells missing"
        )
    return LoadedStack(
        stack=DataStack(values),
        subject_ids=tuple(subj_index),
        row_ids=tuple(row_index),
        col_ids=tuple(col_index),
        source_format="long",
    )


def write_stack_file(path: str, stack: DataStack) -> None:
    """Write stack format with round-trip-exact (repr) values."""
    v = stack.values
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{stack.n_subjects} {stack.n_rows} {stack.n_cols}\n")
        for i in range(stack.n_subjects):
            for a in range(stack.n_rows):
                fh.write("\t".join(repr(float(x)) for x in v[i, a]) + "\n")


def read_matrix_file(path: str, n_rows: int, n_cols: int) -> np.ndarray:
    """Read a bare r x c matrix (no header), delimited like stack values."""
    lines = [(k, raw) for k, raw in enumerate(_read_lines(path), start=1) if raw.strip()]
    if len(lines) != n_rows:
        raise ValueError(f"{path}: expected {n_rows} lines, found {len(lines)}")
    out = np.empty((n_rows, n_cols), dtype=float)
    for a, (line_no, raw) in enumerate(lines):
        tokens = raw.replace(",", " ").replace("\t", " ").split()
        if len(tokens) != n_cols:
            _fail(path, line_no, f"expected {n_cols} values, found {len(tokens)}")
        for b, tok in enumerate(tokens):
            out[a, b] = _parse_value(tok, path, line_no)
    return out


def read_vector_file(path: str, length: int) -> np.ndarray:
    """Read a vector, one value per line."""
    lines = [(k, raw) for k, raw in enumerate(_read_lines(path), start=1) if raw.strip()]
    if len(lines) != length:
        raise ValueError(f"{path}: expected {length} lines, found {len(lines)}")
    out = np.empty(length, dtype=float)
    for k, (line_no, raw) in enumerate(lines):
        tokens = raw.split()
        if len(tokens) != 1:
            _fail(path, line_no, f"expected one value per line, found {len(tokens)}")
        out[k] = _parse_value(tokens[0], path, line_no)
    return out


def read_row_sets(path: str) -> dict[str, tuple[str, ...]]:
    """Read named row-id sets, one set per line.

    Line layout: the set name, then its row ids, separated by tabs or commas.
    Blank lines and lines starting with ``#`` are skipped.
    """
    sets: dict[str, tuple[str, ...]] = {}
    for line_no, raw in enumerate(_read_lines(path), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = [t.strip() for t in raw.replace(",", "\t").split("\t") if t.strip()]
        if len(tokens) < 2:
            _fail(path, line_no, "a set line needs a name and at least one row id")
        name, ids = tokens[0], tokens[1:]
        if name in sets:
            _fail(path, line_no, f"duplicate set name {name!r}")
        if len(set(ids)) != len(ids):
            _fail(path, line_no, f"duplicate row ids in set {name!r}")
        sets[name] = tuple(ids)
    if not sets:
        raise ValueError(f"{path}: no row sets found")
    return sets
