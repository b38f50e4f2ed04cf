"""Relational metadata: validation, the parent-child DAG, and denormalizing joins.

A schema is parsed once from a metadata JSON document and is immutable
afterwards, so it can be shared freely across worker threads.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

COLUMN_KINDS = ("id", "categorical", "numerical", "integer", "datetime")


class SchemaError(Exception):
    """Base class for metadata validation failures."""


class DuplicateName(SchemaError):
    pass


class UnknownReference(SchemaError):
    pass


class CyclicSchema(SchemaError):
    pass


class UnknownTable(SchemaError):
    pass


class DanglingForeignKey(SchemaError):
    pass


@dataclass(frozen=True)
class ForeignKey:
    child_table: str
    child_column: str
    parent_table: str
    parent_column: str

    def __str__(self) -> str:
        return f"{self.child_table}.{self.child_column} -> {self.parent_table}.{self.parent_column}"


@dataclass(frozen=True)
class TableSpec:
    """Ordered column declarations for one table.

    Feature columns are every column that is not id-kind; keys never enter
    the models or the metrics.
    """

    name: str
    columns: tuple[tuple[str, str], ...]
    primary_key: str | None

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.columns)

    @property
    def feature_columns(self) -> tuple[tuple[str, str], ...]:
        return tuple((name, kind) for name, kind in self.columns if kind != "id")

    def kind_of(self, column: str) -> str:
        for name, kind in self.columns:
            if name == column:
                return kind
        raise KeyError(column)


@dataclass(frozen=True)
class RelationalSchema:
    """Validated table specs plus the acyclic foreign-key graph."""

    tables: dict[str, TableSpec]
    relationships: tuple[ForeignKey, ...]

    def table(self, name: str) -> TableSpec:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownTable(f"unknown table {name!r}") from None

    def foreign_keys_of(self, child: str) -> tuple[ForeignKey, ...]:
        """Declared FKs of a child table, in declaration order."""
        self.table(child)
        return tuple(fk for fk in self.relationships if fk.child_table == child)

    def parent_set(self, table: str) -> tuple[str, ...]:
        """Distinct parent tables, ordered by name."""
        return tuple(sorted({fk.parent_table for fk in self.foreign_keys_of(table)}))


def _parse_document(raw: str | bytes | dict) -> dict:
    if isinstance(raw, dict):
        return raw

    def no_duplicates(pairs):
        seen = set()
        for key, _ in pairs:
            if key in seen:
                raise DuplicateName(f"duplicate name {key!r} in metadata")
            seen.add(key)
        return dict(pairs)

    return json.loads(raw, object_pairs_hook=no_duplicates)


def validate_schema(raw: str | bytes | dict) -> RelationalSchema:
    """Parse a metadata document and check every structural invariant.

    Raises DuplicateName, UnknownReference or CyclicSchema; the message
    names the offending table/column.
    """
    doc = _parse_document(raw)
    if "tables" not in doc or not isinstance(doc["tables"], dict):
        raise SchemaError("metadata must contain a 'tables' object")

    tables: dict[str, TableSpec] = {}
    for name, body in doc["tables"].items():
        columns = body.get("columns")
        if not isinstance(columns, dict) or not columns:
            raise SchemaError(f"table {name!r} declares no columns")
        col_list = []
        for col, kind in columns.items():
            if kind not in COLUMN_KINDS:
                raise SchemaError(f"column {name}.{col} has unknown kind {kind!r}")
            col_list.append((col, kind))
        primary_key = body.get("primary_key")
        if primary_key is not None:
            if primary_key not in columns:
                raise UnknownReference(f"primary key {name}.{primary_key} is not a declared column")
            if columns[primary_key] != "id":
                raise SchemaError(f"primary key {name}.{primary_key} must have kind 'id'")
        tables[name] = TableSpec(name=name, columns=tuple(col_list), primary_key=primary_key)

    relationships: list[ForeignKey] = []
    for name, body in doc["tables"].items():
        for fk in body.get("foreign_keys", []):
            col = fk.get("column")
            ref = fk.get("references", {})
            parent, parent_col = ref.get("table"), ref.get("column")
            if col not in tables[name].column_names:
                raise UnknownReference(f"foreign key column {name}.{col} is not declared")
            if tables[name].kind_of(col) != "id":
                raise SchemaError(f"foreign key column {name}.{col} must have kind 'id'")
            if parent not in tables:
                raise UnknownReference(f"foreign key {name}.{col} references missing table {parent!r}")
            if tables[parent].primary_key is None or parent_col != tables[parent].primary_key:
                raise UnknownReference(
                    f"foreign key {name}.{col} must reference the primary key of {parent!r}"
                )
            relationships.append(ForeignKey(name, col, parent, parent_col))

    schema = RelationalSchema(tables=tables, relationships=tuple(relationships))
    _check_acyclic(schema)
    return schema


def load_metadata(path) -> RelationalSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_schema(fh.read())


def _check_acyclic(schema: RelationalSchema) -> None:
    # DFS over parent->child edges; a back edge means some table is its own ancestor.
    children: dict[str, set[str]] = {name: set() for name in schema.tables}
    for fk in schema.relationships:
        children[fk.parent_table].add(fk.child_table)

    state: dict[str, int] = {}  # 1 = on stack, 2 = done
    stack_path: list[str] = []

    def visit(node: str) -> None:
        state[node] = 1
        stack_path.append(node)
        for nxt in sorted(children[node]):
            if state.get(nxt) == 1:
                cycle = stack_path[stack_path.index(nxt):] + [nxt]
                raise CyclicSchema("cycle detected: " + " -> ".join(cycle))
            if state.get(nxt) is None:
                visit(nxt)
        stack_path.pop()
        state[node] = 2

    for name in sorted(schema.tables):
        if state.get(name) is None:
            visit(name)


def topological_order(schema: RelationalSchema) -> list[str]:
    """Table names with every parent before its children, ties lexicographic."""
    parents: dict[str, set[str]] = {name: set() for name in schema.tables}
    children: dict[str, set[str]] = {name: set() for name in schema.tables}
    for fk in schema.relationships:
        if fk.parent_table != fk.child_table:
            parents[fk.child_table].add(fk.parent_table)
            children[fk.parent_table].add(fk.child_table)

    ready = [name for name, ps in parents.items() if not ps]
    heapq.heapify(ready)
    order: list[str] = []
    remaining = {name: len(ps) for name, ps in parents.items()}
    while ready:
        name = heapq.heappop(ready)
        order.append(name)
        for child in sorted(children[name]):
            remaining[child] -= 1
            if remaining[child] == 0:
                heapq.heappush(ready, child)
    assert len(order) == len(schema.tables), "schema validated as acyclic"
    return order


def ancestors(schema: RelationalSchema, table: str, max_depth: int) -> list[tuple[str, int]]:
    """(ancestor, depth) pairs reachable over FK chains, ordered by (depth, name).

    A table reachable through several FK paths of the same length appears
    once per depth; depth 1 equals the declared parent set.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    schema.table(table)
    out: list[tuple[str, int]] = []
    frontier = [table]
    for depth in range(1, max_depth + 1):
        level = sorted({fk.parent_table for t in frontier for fk in schema.foreign_keys_of(t)})
        out.extend((anc, depth) for anc in level)
        frontier = level
    return out


@dataclass(frozen=True)
class FlatTable:
    """A denormalized child table: feature columns only, keys dropped."""

    columns: tuple[tuple[str, str], ...]
    data: dict[str, np.ndarray]

    @property
    def n_rows(self) -> int:
        if not self.columns:
            return 0
        return len(self.data[self.columns[0][0]])

    def feature_items(self) -> list[tuple[str, str, np.ndarray]]:
        return [(name, kind, self.data[name]) for name, kind in self.columns]


def denormalize(database, child: str) -> FlatTable:
    """Join a child table with the feature columns of each direct parent row.

    One output row per child row. Parent columns are prefixed with the
    parent table name (plus the FK column when the same parent is
    referenced more than once). Raises DanglingForeignKey if a child FK
    value has no matching parent primary key.
    """
    schema: RelationalSchema = database.schema
    child_spec = schema.table(child)
    child_table = database.tables[child]
    fks = schema.foreign_keys_of(child)

    columns: list[tuple[str, str]] = list(child_spec.feature_columns)
    data: dict[str, np.ndarray] = {name: child_table.columns[name] for name, _ in columns}

    parent_counts: dict[str, int] = {}
    for fk in fks:
        parent_counts[fk.parent_table] = parent_counts.get(fk.parent_table, 0) + 1

    for fk in fks:
        parent_table = database.tables[fk.parent_table]
        pk_values = parent_table.columns[fk.parent_column]
        index = {value: i for i, value in enumerate(pk_values)}
        fk_values = child_table.columns[fk.child_column]
        rows = np.empty(len(fk_values), dtype=np.int64)
        for i, value in enumerate(fk_values):
            if value not in index:
                raise DanglingForeignKey(
                    f"{child}.{fk.child_column} row {i} value {value!r} "
                    f"has no match in {fk.parent_table}.{fk.parent_column}"
                )
            rows[i] = index[value]
        prefix = (
            f"{fk.parent_table}__"
            if parent_counts[fk.parent_table] == 1
            else f"{fk.parent_table}__{fk.child_column}__"
        )
        for name, kind in schema.table(fk.parent_table).feature_columns:
            out_name = prefix + name
            columns.append((out_name, kind))
            data[out_name] = parent_table.columns[name][rows]

    return FlatTable(columns=tuple(columns), data=data)
