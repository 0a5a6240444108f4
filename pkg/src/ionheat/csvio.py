"""Plot-ready CSV output and dataset CSV input.

Files start with a ``# key: value`` metadata block, then a header row. Floats
are written with ``repr`` so output is exact and byte-stable.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1"
DATASET_COLUMNS = ("time_s", "counts", "shots")
OPTIONAL_COLUMNS = ("level", "delay_s")
POPULATION_COLUMNS = ("time_s", "level", "value", "sigma")


class CsvParseError(ValueError):
    def __init__(self, msg, row=None, path=None):
        where = f"{path or '<csv>'}" + (f", row {row}" if row is not None else "")
        super().__init__(f"{where}: {msg}")
        self.row = row


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(columns, rows, meta: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA_VERSION}\n")
    for k, v in meta.items():
        buf.write(f"# {k}: {_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        if len(r) != len(columns):
            raise ValueError("row length does not match header")
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, columns, rows, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(columns, rows, meta), encoding="utf-8")
    return path


def read_table(path) -> tuple[dict, dict]:
    """Return (metadata, {column: float array}). Row numbers in errors are
    1-based file lines."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    meta, header, rows = {}, None, []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if header is None and ":" in s:
                k, v = s[1:].split(":", 1)
                meta[k.strip()] = v.strip()
            continue
        cells = next(csv.reader([s]))
        if header is None:
            header = [c.strip() for c in cells]
            if len(set(header)) != len(header):
                raise CsvParseError("duplicate column names", lineno, path)
            continue
        if len(cells) != len(header):
            raise CsvParseError(f"expected {len(header)} fields, got {len(cells)}", lineno, path)
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise CsvParseError(f"non-numeric value ({exc})", lineno, path) from exc
        if not all(np.isfinite(rows[-1])):
            raise CsvParseError("non-finite value", lineno, path)
    if header is None:
        raise CsvParseError("empty file (no header row)", None, path)
    if not rows:
        raise CsvParseError("no data rows", None, path)
    arr = np.array(rows, dtype=float)
    return meta, {name: arr[:, i] for i, name in enumerate(header)}


def _first_bad(mask) -> int:
    return int(np.argmax(mask))


def read_dataset(path) -> tuple[dict, dict]:
    """Counts dataset: time_s, counts, shots, optional level / delay_s.

    Row numbers in validation errors count data rows from 1.
    """
    meta, cols = read_table(path)
    missing = [c for c in DATASET_COLUMNS if c not in cols]
    if missing:
        raise CsvParseError(f"missing columns {missing}; expected {list(DATASET_COLUMNS)} [+ {list(OPTIONAL_COLUMNS)}]", None, path)
    k, n = cols["counts"], cols["shots"]
    checks = [
        (n < 1, "shots must be >= 1"),
        ((k < 0) | (k > n), "need 0 <= counts <= shots"),
        (cols["time_s"] < 0, "time_s must be >= 0"),
    ]
    for extra in OPTIONAL_COLUMNS:
        if extra in cols:
            checks.append((cols[extra] < 0, f"{extra} must be >= 0"))
    if "level" in cols:
        checks.append((cols["level"] != np.round(cols["level"]), "level must be an integer"))
    for bad, msg in checks:
        if np.any(bad):
            raise CsvParseError(msg, _first_bad(bad) + 1, path)
    return meta, cols


def read_populations(path) -> tuple[dict, dict]:
    """Population table: time_s, level, value, sigma."""
    meta, cols = read_table(path)
    missing = [c for c in POPULATION_COLUMNS if c not in cols]
    if missing:
        raise CsvParseError(f"missing columns {missing}", None, path)
    bad = (cols["value"] < 0) | (cols["value"] > 1) | (cols["sigma"] <= 0)
    if np.any(bad):
        raise CsvParseError("value must lie in [0, 1] and sigma > 0", _first_bad(bad) + 1, path)
    return meta, cols
