import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rctgan.dataset import Table
from rctgan.schema import validate_schema
from rctgan.transform import (
    ConditionLayout,
    WidthMismatch,
    MissingAncestorRow,
    build_condition,
    build_condition_layout,
    decode_row,
    decode_table,
    encode_row,
    encode_table,
    fit_continuous,
    fit_discrete,
    fit_table_encoders,
)

from test_schema import table_meta, fk


class TestFitContinuous:
    def test_recovers_single_gaussian(self):
        rng = np.random.default_rng(0)
        enc = fit_continuous(rng.normal(5.0, 2.0, 10_000), max_modes=1, seed=0)
        assert enc.n_modes == 1
        assert abs(enc.means[0] - 5.0) < 0.1
        assert abs(enc.stds[0] - 2.0) < 0.1
        # encode(7) with mu=5, sigma=2 gives alpha = (7-5)/(4*2) = 0.25
        block = enc.encode_batch(np.array([7.0]), rng)
        assert abs(block[0, 0] - (7.0 - enc.means[0]) / (4 * enc.stds[0])) < 1e-12
        assert block[0, 1] == 1.0

    def test_constant_column_degenerates(self):
        rng = np.random.default_rng(0)
        enc = fit_continuous(np.array([3.0, 3.0, 3.0]), max_modes=10, seed=0)
        assert enc.n_modes == 1
        assert enc.stds[0] == pytest.approx(3.0 * 1e-6)
        block = enc.encode_batch(np.array([3.0]), rng)
        assert block[0, 0] == 0.0

    def test_two_separated_clusters_keep_two_modes(self):
        rng = np.random.default_rng(1)
        values = np.concatenate([rng.normal(0, 1, 2000), rng.normal(100, 1, 2000)])
        enc = fit_continuous(values, max_modes=10, seed=0)
        assert enc.n_modes == 2
        assert sorted(np.round(enc.means).tolist()) == [0.0, 100.0]

    def test_weights_sum_to_one_after_pruning(self):
        rng = np.random.default_rng(2)
        values = np.concatenate([rng.normal(0, 1, 500), rng.normal(10, 2, 1500)])
        enc = fit_continuous(values, max_modes=10, seed=0)
        assert abs(enc.weights.sum() - 1.0) < 1e-9
        assert (enc.weights >= 0.005).all()

    def test_deterministic_given_seed(self):
        values = np.random.default_rng(3).normal(0, 1, 500)
        a = fit_continuous(values, max_modes=5, seed=42)
        b = fit_continuous(values, max_modes=5, seed=42)
        assert a.means.tolist() == b.means.tolist()
        assert a.weights.tolist() == b.weights.tolist()


class TestDiscrete:
    def test_one_hot(self):
        enc = fit_discrete(np.array(["red", "green", "blue", "green"], dtype=object))
        assert enc.categories == ("blue", "green", "red")
        block = enc.encode_batch(np.array(["green"], dtype=object))
        assert block.tolist() == [[0.0, 1.0, 0.0]]

    def test_frequencies(self):
        enc = fit_discrete(np.array(["a", "a", "b", "a"], dtype=object))
        assert enc.frequencies.tolist() == [0.75, 0.25]
        assert abs(enc.frequencies.sum() - 1.0) < 1e-9

    def test_all_zero_span_decodes_to_first_category(self):
        enc = fit_discrete(np.array(["a", "b"], dtype=object))
        assert enc.decode_batch(np.zeros((1, 2)))[0] == "a"


def toy_table():
    meta = {
        "tables": {
            "t": table_meta(
                {"id": "id", "color": "categorical", "v": "numerical", "n": "integer"}, "id"
            )
        }
    }
    schema = validate_schema(meta)
    rng = np.random.default_rng(0)
    n = 400
    return Table(
        spec=schema.table("t"),
        columns={
            "id": np.array([str(i) for i in range(n)], dtype=object),
            "color": np.array(rng.choice(["red", "green", "blue"], n), dtype=object),
            "v": np.concatenate([rng.normal(0, 1, n // 2), rng.normal(8, 0.5, n // 2)]),
            "n": rng.integers(-5, 6, n).astype(np.int64),
        },
    )


class TestRowCodec:
    def test_layout_covers_feature_columns_only(self):
        table = toy_table()
        layout = fit_table_encoders(table, seed=0)
        assert layout.column_names == ("color", "v", "n")
        assert layout.width == sum(s.width for s in layout.spans)

    def test_encode_decode_row(self):
        table = toy_table()
        layout = fit_table_encoders(table, seed=0)
        rng = np.random.default_rng(0)
        row = {"color": "green", "v": 0.4, "n": 3}
        vec = encode_row(layout, row, rng)
        back = decode_row(layout, vec)
        assert back["color"] == "green"
        assert back["n"] == 3
        assert abs(back["v"] - 0.4) < 1e-6

    def test_width_mismatch(self):
        layout = fit_table_encoders(toy_table(), seed=0)
        with pytest.raises(WidthMismatch):
            decode_row(layout, np.zeros(layout.width + 1))

    def test_batch_roundtrip_tolerance(self):
        table = toy_table()
        layout = fit_table_encoders(table, seed=0)
        rng = np.random.default_rng(1)
        encoded = encode_table(layout, table, rng)
        decoded = decode_table(layout, encoded)
        assert (decoded["color"] == table.columns["color"]).all()
        assert (decoded["n"] == table.columns["n"]).all()
        span = next(s for s in layout.spans if s.column == "v")
        unclipped = np.abs(encoded[:, span.offset]) < 1.0
        err = np.abs(decoded["v"] - table.columns["v"])
        tol = 4.0 * span.encoder.stds.max() * 1e-6
        assert err[unclipped].max() <= tol


@given(st.data())
@settings(max_examples=30, deadline=None)
def test_roundtrip_property(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 16)))
    n = data.draw(st.integers(min_value=10, max_value=80))
    meta = {"tables": {"t": table_meta({"id": "id", "c": "categorical", "v": "numerical"}, "id")}}
    schema = validate_schema(meta)
    table = Table(
        spec=schema.table("t"),
        columns={
            "id": np.array([str(i) for i in range(n)], dtype=object),
            "c": np.array(rng.choice(["x", "y"], n), dtype=object),
            "v": rng.normal(0, 3, n),
        },
    )
    layout = fit_table_encoders(table, max_modes=3, seed=0)
    encoded = encode_table(layout, table, rng)
    decoded = decode_table(layout, encoded)
    assert (decoded["c"] == table.columns["c"]).all()
    span = next(s for s in layout.spans if s.column == "v")
    unclipped = np.abs(encoded[:, span.offset]) < 1.0
    err = np.abs(decoded["v"] - table.columns["v"])
    assert err[unclipped].max() <= 4.0 * span.encoder.stds.max() * 1e-6


CHAIN_META = {
    "tables": {
        "a": table_meta({"id": "id", "cat": "categorical"}, "id"),
        "b": table_meta({"id": "id", "a_id": "id", "w": "numerical"}, "id", [fk("a_id", "a")]),
        "c": table_meta({"id": "id", "b_id": "id", "v": "numerical"}, "id", [fk("b_id", "b")]),
    }
}


def chain_layouts():
    schema = validate_schema(CHAIN_META)
    rng = np.random.default_rng(0)
    a = Table(spec=schema.table("a"), columns={
        "id": np.array(["1", "2"], dtype=object),
        "cat": np.array(["A", "B"], dtype=object),
    })
    b = Table(spec=schema.table("b"), columns={
        "id": np.array(["1", "2"], dtype=object),
        "a_id": np.array(["1", "2"], dtype=object),
        "w": rng.normal(0, 1, 2),
    })
    layouts = {
        "a": fit_table_encoders(a, seed=0),
        "b": fit_table_encoders(b, seed=0),
    }
    return schema, layouts, a, b


class TestConditionLayout:
    def test_root_has_empty_condition(self):
        schema, layouts, *_ = chain_layouts()
        layout = build_condition_layout(schema, "a", layouts, max_depth=1)
        assert layout.width == 0
        assert build_condition(layout, [], np.random.default_rng(0)).shape == (0,)

    def test_depth_one_single_parent(self):
        schema, layouts, a, _ = chain_layouts()
        layout = build_condition_layout(schema, "b", layouts, max_depth=1)
        assert [(s.table, s.depth) for s in layout.slots] == [("a", 1)]
        vec = build_condition(layout, [{"cat": "A"}], np.random.default_rng(0))
        assert vec.tolist() == [1.0, 0.0]

    def test_depth_two_concatenation_order(self):
        schema, layouts, a, b = chain_layouts()
        layout = build_condition_layout(schema, "c", layouts, max_depth=2)
        assert [(s.table, s.depth) for s in layout.slots] == [("b", 1), ("a", 2)]
        rng = np.random.default_rng(0)
        vec = build_condition(layout, [{"w": float(b.columns["w"][0])}, {"cat": "B"}], rng)
        w_width = layouts["b"].width
        assert len(vec) == w_width + 2
        assert vec[w_width:].tolist() == [0.0, 1.0]

    def test_missing_ancestor_row(self):
        schema, layouts, *_ = chain_layouts()
        layout = build_condition_layout(schema, "b", layouts, max_depth=1)
        with pytest.raises(MissingAncestorRow):
            build_condition(layout, [], np.random.default_rng(0))

    def test_condition_width_constant(self):
        schema, layouts, a, b = chain_layouts()
        layout = build_condition_layout(schema, "c", layouts, max_depth=2)
        rng = np.random.default_rng(0)
        widths = set()
        for w, cat in [(0.0, "A"), (1.0, "B"), (-2.0, "A")]:
            widths.add(len(build_condition(layout, [{"w": w}, {"cat": cat}], rng)))
        assert widths == {layout.width}

    def test_two_fks_to_same_parent_get_their_own_slots(self):
        meta = {
            "tables": {
                "airport": table_meta({"id": "id", "zone": "categorical"}, "id"),
                "flight": table_meta(
                    {"id": "id", "origin": "id", "dest": "id"},
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
        layouts = {"airport": fit_table_encoders(airport, seed=0)}
        layout = build_condition_layout(schema, "flight", layouts, max_depth=1)
        assert [(s.table, s.fk_path[0].child_column) for s in layout.slots] == [
            ("airport", "origin"), ("airport", "dest"),
        ]
        rng = np.random.default_rng(0)
        vec = build_condition(layout, [{"zone": "N"}, {"zone": "S"}], rng)
        assert vec.tolist() == [1.0, 0.0, 0.0, 1.0]
