"""CSV-directory databases held as typed column stores.

Column kinds map to storage types: id and categorical columns are kept as
string object arrays, numerical and datetime as float64, integer as int64.
Datetime cells are converted to seconds since the Unix epoch at ingestion
and treated as continuous from then on. Missing cells (empty strings) are
imputed at load: column mean for continuous/integer columns, a dedicated
"__missing__" category for categorical ones, so every downstream encoder
stays total.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .schema import RelationalSchema, TableSpec

MISSING_CATEGORY = "__missing__"


class DatasetError(Exception):
    pass


class MissingFile(DatasetError):
    pass


class HeaderMismatch(DatasetError):
    pass


class ParseError(DatasetError):
    pass


class IoError(DatasetError):
    pass


@dataclass
class Table:
    """One table's columns, row-aligned, matching its TableSpec."""

    spec: TableSpec
    columns: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if tuple(self.columns) != self.spec.column_names:
            raise DatasetError(
                f"table {self.spec.name!r}: columns {tuple(self.columns)} "
                f"do not match spec {self.spec.column_names}"
            )
        lengths = {len(col) for col in self.columns.values()}
        if len(lengths) > 1:
            raise DatasetError(f"table {self.spec.name!r}: ragged columns {lengths}")

    @property
    def n_rows(self) -> int:
        return len(self.columns[self.spec.column_names[0]])

    def feature_items(self) -> list[tuple[str, str, np.ndarray]]:
        return [(name, kind, self.columns[name]) for name, kind in self.spec.feature_columns]

    def row(self, i: int) -> dict[str, object]:
        return {name: self.columns[name][i] for name in self.spec.column_names}


@dataclass
class Database:
    schema: RelationalSchema
    tables: dict[str, Table]


@dataclass(frozen=True)
class IntegrityViolation:
    child_table: str
    column: str
    row: int
    value: str

    def __str__(self) -> str:
        return f"{self.child_table}.{self.column} row {self.row}: value {self.value!r} has no parent"


def _parse_datetime(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_column(name: str, kind: str, cells: list[str], table: str) -> np.ndarray:
    if kind == "id":
        for row, text in enumerate(cells):
            if text == "":
                raise ParseError(f"{table}.{name} row {row}: empty id cell")
        return np.array(cells, dtype=object)

    if kind == "categorical":
        return np.array([text if text != "" else MISSING_CATEGORY for text in cells], dtype=object)

    values = np.empty(len(cells), dtype=np.float64)
    for row, text in enumerate(cells):
        if text == "":
            values[row] = np.nan
            continue
        try:
            if kind == "datetime":
                values[row] = _parse_datetime(text)
            elif kind == "integer":
                values[row] = int(text)
            else:
                values[row] = float(text)
        except ValueError:
            raise ParseError(
                f"{table}.{name} row {row}: cannot parse {text!r} as {kind}"
            ) from None
        if not math.isfinite(values[row]):
            raise ParseError(f"{table}.{name} row {row}: non-finite value {text!r}")

    missing = np.isnan(values)
    if missing.any():
        fill = float(np.mean(values[~missing])) if not missing.all() else 0.0
        if kind == "integer":
            fill = round(fill)
        values[missing] = fill
    if kind == "integer":
        return values.astype(np.int64)
    return values


def load_database(schema: RelationalSchema, directory) -> Database:
    """Load <table>.csv for every schema table; header must match the declared columns."""
    tables: dict[str, Table] = {}
    for name, spec in schema.tables.items():
        path = os.path.join(directory, f"{name}.csv")
        if not os.path.isfile(path):
            raise MissingFile(f"missing file {path}")
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise HeaderMismatch(f"{path}: empty file, expected header") from None
            if tuple(header) != spec.column_names:
                raise HeaderMismatch(
                    f"{path}: header {header} does not match schema columns {list(spec.column_names)}"
                )
            rows = list(reader)
        for i, row in enumerate(rows):
            if len(row) != len(spec.column_names):
                raise ParseError(f"{path} row {i}: expected {len(spec.column_names)} cells, got {len(row)}")
        columns = {}
        for j, (col, kind) in enumerate(spec.columns):
            columns[col] = _parse_column(col, kind, [row[j] for row in rows], name)
        tables[name] = Table(spec=spec, columns=columns)
    return Database(schema=schema, tables=tables)


def _format_cell(kind: str, value) -> str:
    if kind in ("id", "categorical"):
        return str(value)
    if kind == "integer":
        return str(int(value))
    # shortest round-trip float formatting
    return repr(float(value))


def write_database(database: Database, directory) -> None:
    """Write one <table>.csv per table; floats use shortest round-trip form."""
    try:
        os.makedirs(directory, exist_ok=True)
        for name, table in database.tables.items():
            path = os.path.join(directory, f"{name}.csv")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(table.spec.column_names)
                kinds = [kind for _, kind in table.spec.columns]
                cols = [table.columns[c] for c in table.spec.column_names]
                for i in range(table.n_rows):
                    writer.writerow([_format_cell(k, col[i]) for k, col in zip(kinds, cols)])
    except OSError as exc:
        raise IoError(str(exc)) from exc


def check_referential_integrity(database: Database) -> list[IntegrityViolation]:
    """Every FK value must appear in the referenced primary-key column."""
    violations: list[IntegrityViolation] = []
    for fk in database.schema.relationships:
        parent = database.tables[fk.parent_table]
        child = database.tables[fk.child_table]
        pk_values = set(parent.columns[fk.parent_column])
        for row, value in enumerate(child.columns[fk.child_column]):
            if value not in pk_values:
                violations.append(
                    IntegrityViolation(fk.child_table, fk.child_column, row, str(value))
                )
    return violations
