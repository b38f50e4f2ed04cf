import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rctgan.dataset import Database, Table
from rctgan.schema import (
    CyclicSchema,
    DanglingForeignKey,
    DuplicateName,
    UnknownReference,
    UnknownTable,
    ancestors,
    denormalize,
    topological_order,
    validate_schema,
)


def table_meta(columns, primary_key=None, foreign_keys=()):
    return {"primary_key": primary_key, "columns": columns, "foreign_keys": list(foreign_keys)}


def fk(column, table, ref="id"):
    return {"column": column, "references": {"table": table, "column": ref}}


STORE_SALES = {
    "tables": {
        "store": table_meta({"id": "id", "city": "categorical"}, "id"),
        "sales": table_meta(
            {"id": "id", "store_id": "id", "amount": "numerical"},
            "id",
            [fk("store_id", "store")],
        ),
    }
}

DIAMOND = {
    "tables": {
        "a": table_meta({"id": "id", "x": "numerical"}, "id"),
        "b": table_meta({"id": "id", "a_id": "id"}, "id", [fk("a_id", "a")]),
        "c": table_meta({"id": "id", "a_id": "id"}, "id", [fk("a_id", "a")]),
        "d": table_meta(
            {"id": "id", "b_id": "id", "c_id": "id"},
            "id",
            [fk("b_id", "b"), fk("c_id", "c")],
        ),
    }
}

CHAIN = {
    "tables": {
        "a": table_meta({"id": "id", "x": "categorical"}, "id"),
        "b": table_meta({"id": "id", "a_id": "id"}, "id", [fk("a_id", "a")]),
        "c": table_meta({"id": "id", "b_id": "id"}, "id", [fk("b_id", "b")]),
    }
}


class TestValidate:
    def test_single_table_no_fks(self):
        schema = validate_schema({"tables": {"t": table_meta({"id": "id", "v": "numerical"}, "id")}})
        assert schema.relationships == ()

    def test_self_loop_is_cyclic(self):
        meta = {
            "tables": {
                "a": table_meta({"id": "id", "parent_id": "id"}, "id", [fk("parent_id", "a")])
            }
        }
        with pytest.raises(CyclicSchema, match="cycle"):
            validate_schema(meta)

    def test_two_table_parent_set(self):
        schema = validate_schema(STORE_SALES)
        assert schema.parent_set("sales") == ("store",)
        assert schema.parent_set("store") == ()

    def test_fk_to_missing_table(self):
        meta = {
            "tables": {
                "a": table_meta({"id": "id", "b_id": "id"}, "id", [fk("b_id", "nope")])
            }
        }
        with pytest.raises(UnknownReference):
            validate_schema(meta)

    def test_fk_must_reference_primary_key(self):
        meta = {
            "tables": {
                "p": table_meta({"id": "id", "v": "numerical"}, "id"),
                "c": table_meta({"id": "id", "p_v": "id"}, "id", [fk("p_v", "p", ref="v")]),
            }
        }
        with pytest.raises(UnknownReference):
            validate_schema(meta)

    def test_duplicate_table_name_in_json_text(self):
        text = (
            '{"tables": {"a": {"primary_key": "id", "columns": {"id": "id"}, "foreign_keys": []},'
            ' "a": {"primary_key": "id", "columns": {"id": "id"}, "foreign_keys": []}}}'
        )
        with pytest.raises(DuplicateName):
            validate_schema(text)

    def test_duplicate_column_name_in_json_text(self):
        text = json.dumps({"tables": {"a": table_meta({"id": "id"}, "id")}})
        text = text.replace('"columns": {"id": "id"}', '"columns": {"id": "id", "id": "id"}')
        with pytest.raises(DuplicateName):
            validate_schema(text)

    def test_longer_cycle(self):
        meta = {
            "tables": {
                "a": table_meta({"id": "id", "b_id": "id"}, "id", [fk("b_id", "b")]),
                "b": table_meta({"id": "id", "a_id": "id"}, "id", [fk("a_id", "a")]),
            }
        }
        with pytest.raises(CyclicSchema, match="cycle"):
            validate_schema(meta)


class TestTopologicalOrder:
    def test_single_table(self):
        schema = validate_schema({"tables": {"a": table_meta({"id": "id"}, "id")}})
        assert topological_order(schema) == ["a"]

    def test_chain(self):
        assert topological_order(validate_schema(CHAIN)) == ["a", "b", "c"]

    def test_diamond_against_permutation_oracle(self):
        schema = validate_schema(DIAMOND)
        order = topological_order(schema)

        def respects_parents(perm):
            pos = {name: i for i, name in enumerate(perm)}
            return all(pos[r.parent_table] < pos[r.child_table] for r in schema.relationships)

        valid = [list(p) for p in itertools.permutations(schema.tables) if respects_parents(p)]
        assert order in valid
        # lexicographic tie-break picks b before c
        assert order == ["a", "b", "c", "d"]


@st.composite
def random_dag_schema(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    names = [f"t{i}" for i in range(n)]
    tables = {name: table_meta({"id": "id", "v": "numerical"}, "id") for name in names}
    # edges only from lower to higher index guarantee acyclicity
    for j in range(1, n):
        parents = draw(st.lists(st.integers(min_value=0, max_value=j - 1),
                                unique=True, max_size=min(j, 3)))
        for k, i in enumerate(parents):
            col = f"fk{k}"
            tables[names[j]]["columns"][col] = "id"
            tables[names[j]]["foreign_keys"].append(fk(col, names[i]))
    return {"tables": tables}


@given(random_dag_schema())
@settings(max_examples=60, deadline=None)
def test_topological_order_property(meta):
    schema = validate_schema(meta)
    order = topological_order(schema)
    assert sorted(order) == sorted(schema.tables)
    pos = {name: i for i, name in enumerate(order)}
    for rel in schema.relationships:
        assert pos[rel.parent_table] < pos[rel.child_table]


class TestAncestors:
    def test_chain_depth_one(self):
        schema = validate_schema(CHAIN)
        assert ancestors(schema, "c", 1) == [("b", 1)]

    def test_chain_depth_two(self):
        schema = validate_schema(CHAIN)
        assert ancestors(schema, "c", 2) == [("b", 1), ("a", 2)]

    def test_diamond_collapses_paths(self):
        # two reverse-edge paths d->b->a and d->c->a give one (a, 2) entry
        schema = validate_schema(DIAMOND)
        assert ancestors(schema, "d", 2) == [("b", 1), ("c", 1), ("a", 2)]

    def test_depth_one_equals_parent_set(self):
        schema = validate_schema(DIAMOND)
        for table in schema.tables:
            got = tuple(t for t, _ in ancestors(schema, table, 1))
            assert got == schema.parent_set(table)

    def test_unknown_table(self):
        schema = validate_schema(CHAIN)
        with pytest.raises(UnknownTable):
            ancestors(schema, "zzz", 1)


def store_sales_db(store_rows, sales_rows):
    schema = validate_schema(STORE_SALES)
    store = Table(
        spec=schema.table("store"),
        columns={
            "id": np.array([r[0] for r in store_rows], dtype=object),
            "city": np.array([r[1] for r in store_rows], dtype=object),
        },
    )
    sales = Table(
        spec=schema.table("sales"),
        columns={
            "id": np.array([r[0] for r in sales_rows], dtype=object),
            "store_id": np.array([r[1] for r in sales_rows], dtype=object),
            "amount": np.array([r[2] for r in sales_rows], dtype=np.float64),
        },
    )
    return Database(schema=schema, tables={"store": store, "sales": sales})


class TestDenormalize:
    def test_hand_computed_join(self):
        db = store_sales_db(
            [("1", "A"), ("2", "B")],
            [("1", "1", 10.0), ("2", "1", 20.0), ("3", "2", 30.0)],
        )
        flat = denormalize(db, "sales")
        assert [c for c, _ in flat.columns] == ["amount", "store__city"]
        assert flat.data["amount"].tolist() == [10.0, 20.0, 30.0]
        assert flat.data["store__city"].tolist() == ["A", "A", "B"]

    def test_empty_child_keeps_header(self):
        db = store_sales_db([("1", "A")], [])
        flat = denormalize(db, "sales")
        assert [c for c, _ in flat.columns] == ["amount", "store__city"]
        assert flat.n_rows == 0

    def test_dangling_fk(self):
        db = store_sales_db([("1", "A")], [("1", "99", 5.0)])
        with pytest.raises(DanglingForeignKey):
            denormalize(db, "sales")

    def test_row_count_matches_child(self):
        db = store_sales_db(
            [("1", "A"), ("2", "B"), ("3", "C")],
            [(str(i), str(1 + i % 3), float(i)) for i in range(17)],
        )
        assert denormalize(db, "sales").n_rows == 17

    def test_same_parent_twice_prefixes_with_fk_column(self):
        meta = {
            "tables": {
                "airport": table_meta({"id": "id", "zone": "categorical"}, "id"),
                "flight": table_meta(
                    {"id": "id", "origin": "id", "dest": "id", "mins": "numerical"},
                    "id",
                    [fk("origin", "airport"), fk("dest", "airport")],
                ),
            }
        }
        schema = validate_schema(meta)
        airport = Table(spec=schema.table("airport"), columns={
            "id": np.array(["1", "2"], dtype=object),
            "zone": np.array(["N", "S"], dtype=object),
        })
        flight = Table(spec=schema.table("flight"), columns={
            "id": np.array(["1"], dtype=object),
            "origin": np.array(["1"], dtype=object),
            "dest": np.array(["2"], dtype=object),
            "mins": np.array([42.0]),
        })
        flat = denormalize(Database(schema=schema, tables={"airport": airport, "flight": flight}),
                           "flight")
        names = [c for c, _ in flat.columns]
        assert names == ["mins", "airport__origin__zone", "airport__dest__zone"]
        assert flat.data["airport__origin__zone"].tolist() == ["N"]
        assert flat.data["airport__dest__zone"].tolist() == ["S"]
