import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rctgan.dataset import Table
from rctgan.detection import (
    SingleClass,
    eq4_score,
    ld_score,
    pc_ld_score,
    roc_auc,
    train_logistic,
    build_report,
)
from rctgan.schema import validate_schema

from test_schema import store_sales_db, table_meta


def brute_force_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p, q in itertools.product(pos, neg):
        total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


class TestRocAuc:
    def test_hand_computed_pairs(self):
        scores = [0.9, 0.4, 0.3, 0.5]
        labels = [1, 1, 0, 0]
        assert roc_auc(scores, labels) == pytest.approx(0.75)
        assert brute_force_auc(scores, labels) == pytest.approx(0.75)

    def test_all_ties_is_half(self):
        assert roc_auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == pytest.approx(0.5)

    def test_perfect_ordering(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == pytest.approx(1.0)

    def test_single_class_rejected(self):
        with pytest.raises(SingleClass):
            roc_auc([0.1, 0.2], [1, 1])

    @given(st.lists(st.tuples(st.floats(-5, 5), st.booleans()), min_size=2, max_size=40))
    @settings(max_examples=80, deadline=None)
    def test_matches_brute_force(self, pairs):
        scores = [round(p[0], 2) for p in pairs]  # rounding forces ties
        labels = [int(p[1]) for p in pairs]
        if len(set(labels)) < 2:
            labels[0] = 1 - labels[0]
        assert roc_auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels))

    @given(st.lists(st.tuples(st.floats(-3, 3), st.booleans()), min_size=2, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_monotone_transform(self, pairs):
        # coarse grid keeps the tie structure intact under the transform
        scores = np.array([round(p[0], 2) for p in pairs])
        labels = [int(p[1]) for p in pairs]
        if len(set(labels)) < 2:
            labels[0] = 1 - labels[0]
        a = roc_auc(scores, labels)
        b = roc_auc(np.exp(2.0 * scores) + 7.0, labels)
        assert a == pytest.approx(b)


class TestEq4:
    @pytest.mark.parametrize("auc,score", [
        (0.5, 1.0), (1.0, 0.0), (0.3, 1.0), (0.75, 0.5), (0.68665, 0.6267),
    ])
    def test_mapping(self, auc, score):
        assert abs(eq4_score(auc) - score) <= 1e-12

    @given(st.floats(0.0, 0.5))
    @settings(max_examples=50, deadline=None)
    def test_linear_identity_above_chance(self, x):
        # score(0.5 + x) + 2x = 1 on [0, 0.5]
        assert eq4_score(0.5 + x) + 2 * x == pytest.approx(1.0, abs=1e-9)


class TestTrainLogistic:
    def test_separable_training_auc_one(self):
        x = np.array([[-1.0], [1.0]])
        y = np.array([0.0, 1.0])
        w, b = train_logistic(x, y)
        assert roc_auc(x @ w + b, y) == 1.0

    def test_identical_points_auc_half(self):
        x = np.zeros((10, 1))
        y = np.array([0, 1] * 5, dtype=float)
        w, b = train_logistic(x, y)
        assert roc_auc(x @ w + b, y) == pytest.approx(0.5)

    def test_xor_stays_near_chance(self):
        rng = np.random.default_rng(0)
        n = 400
        a = rng.integers(0, 2, n)
        b = rng.integers(0, 2, n)
        x = np.column_stack([a, b]).astype(float) + rng.normal(0, 0.05, (n, 2))
        y = (a ^ b).astype(float)
        x = (x - x.mean(0)) / x.std(0)
        w, bias = train_logistic(x, y)
        assert roc_auc(x @ w + bias, y) < 0.65

    def test_single_class_rejected(self):
        with pytest.raises(SingleClass):
            train_logistic(np.zeros((3, 1)), np.ones(3))


def make_table(values, cats, name="t"):
    meta = {"tables": {name: table_meta({"id": "id", "v": "numerical", "c": "categorical"}, "id")}}
    schema = validate_schema(meta)
    n = len(values)
    return Table(spec=schema.table(name), columns={
        "id": np.array([str(i) for i in range(n)], dtype=object),
        "v": np.asarray(values, dtype=np.float64),
        "c": np.asarray(cats, dtype=object),
    })


class TestLdScore:
    def test_identical_copy_near_one(self):
        rng = np.random.default_rng(0)
        values = rng.normal(3, 2, 300)
        cats = rng.choice(["x", "y"], 300)
        real = make_table(values, cats)
        synth = make_table(values.copy(), cats.copy())
        result = ld_score(real, synth, folds=3, seed=0)
        assert result.score >= 0.85

    def test_shuffled_rows_near_one(self):
        rng = np.random.default_rng(1)
        values = rng.normal(0, 1, 300)
        cats = rng.choice(["x", "y"], 300)
        perm = rng.permutation(300)
        result = ld_score(make_table(values, cats), make_table(values[perm], cats[perm]),
                          folds=3, seed=0)
        assert result.score >= 0.85

    def test_obvious_mismatch_near_zero(self):
        rng = np.random.default_rng(2)
        real = make_table(rng.normal(10, 1, 300), rng.choice(["x", "y"], 300))
        synth = make_table(rng.uniform(0, 1, 300), rng.choice(["x", "y"], 300))
        result = ld_score(real, synth, folds=3, seed=0)
        assert result.score <= 0.15

    def test_empty_table_rejected(self):
        real = make_table([], [])
        synth = make_table([], [])
        with pytest.raises(SingleClass):
            ld_score(real, synth)

    def test_class_subsampling_balances(self):
        rng = np.random.default_rng(3)
        values = rng.normal(0, 1, 400)
        cats = rng.choice(["x", "y"], 400)
        real = make_table(values, cats)
        synth = make_table(values[:100], cats[:100])
        result = ld_score(real, synth, folds=3, seed=0)
        assert result.n_real == 400 and result.n_synth == 100
        assert result.score >= 0.7  # same distribution, only sizes differ


class TestPcLd:
    def test_exact_copy_scores_high(self):
        rng = np.random.default_rng(4)
        stores = [(str(i), rng.choice(["A", "B"])) for i in range(1, 41)]
        sales = [(str(j), str(rng.integers(1, 41)), float(rng.normal())) for j in range(1, 241)]
        db = store_sales_db(stores, sales)
        result = pc_ld_score(db, db, "sales", folds=3, seed=0)
        assert result.score >= 0.85

    def test_broken_dependence_scores_below_standalone(self):
        # real: child value tracks parent category; synth: same marginals, no link
        rng = np.random.default_rng(5)
        n_parent, per_parent = 60, 4
        cats = ["A"] * (n_parent // 2) + ["B"] * (n_parent // 2)
        stores = [(str(i + 1), cats[i]) for i in range(n_parent)]
        real_sales, synth_sales = [], []
        k = 0
        for i in range(n_parent):
            for _ in range(per_parent):
                k += 1
                dependent = rng.normal(0.0 if cats[i] == "A" else 5.0, 1.0)
                marginal = rng.normal(0.0 if rng.random() < 0.5 else 5.0, 1.0)
                real_sales.append((str(k), str(i + 1), dependent))
                synth_sales.append((str(k), str(i + 1), marginal))
        real_db = store_sales_db(stores, real_sales)
        synth_db = store_sales_db(stores, synth_sales)

        pc = pc_ld_score(real_db, synth_db, "sales", folds=3, seed=0)
        store_ld = ld_score(real_db.tables["store"], synth_db.tables["store"], folds=3, seed=0)
        sales_ld = ld_score(real_db.tables["sales"], synth_db.tables["sales"], folds=3, seed=0)
        assert pc.score < store_ld.score
        assert pc.score < sales_ld.score

    def test_report_structure(self):
        rng = np.random.default_rng(6)
        stores = [(str(i), rng.choice(["A", "B"])) for i in range(1, 31)]
        sales = [(str(j), str(rng.integers(1, 31)), float(rng.normal())) for j in range(1, 151)]
        db = store_sales_db(stores, sales)
        report = build_report(db, db, folds=3, seed=0)
        payload = report.to_json()
        assert set(payload) == {"tables", "relationships", "avg_ld", "avg_pc_ld", "folds", "seed"}
        assert set(payload["tables"]) == {"store", "sales"}
        assert [r["child"] for r in payload["relationships"]] == ["sales"]
        assert payload["folds"] == 3
