"""Columnar tables and conversion between external rows and tensors.

Numeric columns become ``n x 1`` tensors of the matching dtype, dates become
int64 microseconds since 1970-01-01T00:00:00 UTC, and strings become
``n x max_len`` uint8 tensors of UTF-8 bytes right-padded with zeros.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from tqe.errors import StorageError
from tqe.kernels import Tensor, from_numpy

LOGICAL_TYPES = ("int32", "int64", "float64", "date", "string")
# "bool" only appears on derived columns (predicates, outer-join match masks)
_ALL_TYPES = LOGICAL_TYPES + ("bool",)

_NUMERIC_DTYPE = {"int32": np.int32, "int64": np.int64, "float64": np.float64, "bool": np.bool_}
_EPOCH = _dt.datetime(1970, 1, 1)


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    logical_type: str
    max_len: int = 0

    def __post_init__(self):
        if self.logical_type not in _ALL_TYPES:
            raise StorageError(f"column {self.name!r}: unknown type {self.logical_type!r}")
        if self.max_len < 0:
            raise StorageError(f"column {self.name!r}: negative max_len")

    @classmethod
    def from_json(cls, d: Mapping) -> "ColumnMeta":
        return cls(d["name"], d["type"], int(d.get("max_len", 0) or 0))

    def to_json(self) -> dict:
        d = {"name": self.name, "type": self.logical_type}
        if self.logical_type == "string":
            d["max_len"] = self.max_len
        return d


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[tuple[ColumnMeta, Tensor], ...]

    def __post_init__(self):
        names = [m.name for m, _ in self.columns]
        if len(set(names)) != len(names):
            raise StorageError(f"table {self.name!r}: duplicate column names")
        rows = {t.rows for _, t in self.columns}
        if len(rows) > 1:
            raise StorageError(f"table {self.name!r}: columns differ in row count")

    @property
    def row_count(self) -> int:
        return self.columns[0][1].rows if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [m.name for m, _ in self.columns]

    @property
    def schema(self) -> list[ColumnMeta]:
        return [m for m, _ in self.columns]

    def column(self, name: str) -> Tensor:
        for m, t in self.columns:
            if m.name == name:
                return t
        raise StorageError(f"table {self.name!r} has no column {name!r}")

    def meta(self, name: str) -> ColumnMeta:
        for m, _ in self.columns:
            if m.name == name:
                return m
        raise StorageError(f"table {self.name!r} has no column {name!r}")

    def select(self, names: Sequence[str]) -> "Table":
        return Table(self.name, tuple((self.meta(n), self.column(n)) for n in names))


def parse_date_us(value) -> int:
    """Microseconds since the Unix epoch for a date/datetime or ISO string."""
    if isinstance(value, _dt.datetime):
        d = value.replace(tzinfo=None) if value.tzinfo is None else value.astimezone(_dt.timezone.utc).replace(tzinfo=None)
    elif isinstance(value, _dt.date):
        d = _dt.datetime(value.year, value.month, value.day)
    elif isinstance(value, str):
        try:
            d = _dt.datetime.fromisoformat(value.strip())
        except ValueError:
            raise StorageError(f"invalid date {value!r}") from None
        if d.tzinfo is not None:
            d = d.astimezone(_dt.timezone.utc).replace(tzinfo=None)
    else:
        raise StorageError(f"invalid date {value!r}")
    delta = d - _EPOCH
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


def format_date_us(us: int) -> str:
    return (_EPOCH + _dt.timedelta(microseconds=int(us))).isoformat()


def _utf8(value, meta: ColumnMeta) -> bytes:
    if not isinstance(value, str):
        raise StorageError(f"column {meta.name!r}: expected string, got {value!r}")
    b = value.encode("utf-8")
    if b"\x00" in b:
        raise StorageError(f"column {meta.name!r}: interior NUL byte in {value!r}")
    return b


def encode_column(values: Sequence, meta: ColumnMeta) -> Tensor:
    ltype = meta.logical_type
    if ltype == "string":
        raw = [_utf8(v, meta) for v in values]
        width = meta.max_len or max((len(b) for b in raw), default=1) or 1
        if any(len(b) > width for b in raw):
            raise StorageError(f"column {meta.name!r}: string exceeds column width {width}")
        buf = np.array(raw, dtype=f"S{width}") if raw else np.zeros(0, f"S{width}")
        return from_numpy(buf.view(np.uint8).reshape(len(raw), width))
    if ltype == "date":
        return from_numpy(np.array([parse_date_us(v) for v in values], dtype=np.int64))
    if isinstance(values, np.ndarray) and values.dtype == _NUMERIC_DTYPE[ltype]:
        return from_numpy(values)  # zero-copy
    try:
        arr = np.array(list(values), dtype=_NUMERIC_DTYPE[ltype])
    except (TypeError, ValueError, OverflowError) as e:
        raise StorageError(f"column {meta.name!r}: {e}") from None
    return from_numpy(arr.reshape(-1))


def decode_column(t: Tensor, meta: ColumnMeta) -> list:
    a = t.numpy()
    ltype = meta.logical_type
    if ltype == "string":
        return [b.decode("utf-8") for b in np.ascontiguousarray(a).view(f"S{a.shape[1]}")[:, 0]]
    if ltype == "date":
        return [format_date_us(v) for v in a[:, 0].tolist()]
    return a[:, 0].tolist()


def decode_table(t: Table) -> list[tuple]:
    cols = [decode_column(tensor, meta) for meta, tensor in t.columns]
    return list(zip(*cols)) if cols else []


def make_table(name: str, schema: Sequence[ColumnMeta], columns: Mapping[str, Sequence]) -> Table:
    """Build a table from per-column python values."""
    out = []
    for meta in schema:
        t = encode_column(columns[meta.name], meta)
        if meta.logical_type == "string" and meta.max_len == 0:
            meta = replace(meta, max_len=t.cols)
        out.append((meta, t))
    return Table(name, tuple(out))


_PARSERS = {
    "int32": int,
    "int64": int,
    "float64": float,
    "date": lambda s: s,
    "string": lambda s: s,
}


def ingest_csv(path, schema: Sequence[ColumnMeta], projected: Iterable[str] | None = None,
               name: str | None = None) -> Table:
    """Read a headed CSV file, encoding only the ``projected`` columns."""
    path = Path(path)
    by_name = {m.name: m for m in schema}
    wanted = list(projected) if projected is not None else [m.name for m in schema]
    for col in wanted:
        if col not in by_name:
            raise StorageError(f"{path.name}: column {col!r} not in schema")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise StorageError(f"{path.name}: missing header row") from None
        positions = {}
        for col in wanted:
            try:
                positions[col] = header.index(col)
            except ValueError:
                raise StorageError(f"{path.name}: column {col!r} missing from header") from None
        values = {col: [] for col in wanted}
        for rowno, row in enumerate(reader, start=2):
            for col in wanted:
                cell = row[positions[col]] if positions[col] < len(row) else None
                ltype = by_name[col].logical_type
                if cell is None or (cell == "" and ltype != "string"):
                    raise StorageError(f"{path.name}: row {rowno}, column {col!r}: empty cell (NULLs unsupported)")
                try:
                    values[col].append(_PARSERS[ltype](cell))
                except ValueError:
                    raise StorageError(f"{path.name}: row {rowno}, column {col!r}: cannot parse {cell!r}") from None
    try:
        return make_table(name or path.stem, [by_name[c] for c in wanted], values)
    except StorageError as e:
        raise StorageError(f"{path.name}: {e}") from None


@dataclass(frozen=True)
class TableSource:
    """A CSV file plus its declared schema, as listed in ``tables.json``."""

    name: str
    path: Path
    schema: tuple[ColumnMeta, ...]

    def load(self, projected: Iterable[str] | None = None) -> Table:
        return ingest_csv(self.path, self.schema, projected, name=self.name)


@dataclass
class Catalog:
    sources: dict[str, TableSource] = field(default_factory=dict)

    def schema(self, table: str) -> list[ColumnMeta]:
        try:
            return list(self.sources[table].schema)
        except KeyError:
            raise StorageError(f"unknown table {table!r}") from None

    def __contains__(self, table: str) -> bool:
        return table in self.sources


def load_catalog(data_dir) -> Catalog:
    """Parse ``<data_dir>/tables.json``."""
    data_dir = Path(data_dir)
    spec_path = data_dir / "tables.json"
    try:
        spec = json.loads(spec_path.read_text())
    except FileNotFoundError:
        raise StorageError(f"{spec_path}: no such file") from None
    except json.JSONDecodeError as e:
        raise StorageError(f"{spec_path}: {e}") from None
    sources = {}
    for name, entry in spec.items():
        path = data_dir / entry["source"]
        if not path.exists():
            raise StorageError(f"table {name!r}: source file {path} not found")
        schema = tuple(ColumnMeta.from_json(c) for c in entry["columns"])
        sources[name] = TableSource(name, path, schema)
    return Catalog(sources)


def write_catalog(data_dir, tables: Mapping[str, tuple[str, Sequence[ColumnMeta]]]) -> None:
    """Write ``tables.json`` for ``{name: (csv filename, schema)}``."""
    doc = {name: {"source": src, "columns": [m.to_json() for m in schema]}
           for name, (src, schema) in tables.items()}
    Path(data_dir, "tables.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
