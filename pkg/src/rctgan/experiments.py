"""Desk-scale conditioning experiments.

Two synthetic constructions probe whether ancestor conditioning actually
transports cross-table signal:

* parent experiment: a parent category flips the child value distribution
  between N(0,1) and N(5,1); a depth-1 model should reproduce the
  conditional means while an unconditioned ablation cannot.
* grandparent experiment: the same signal moved one level up, with an
  uninformative middle table, so only depth-2 conditioning can recover it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Database, Table
from .detection import LdResult, ld_score, pc_ld_score
from .gan import TrainConfig
from .schema import FlatTable, validate_schema
from .synthesizer import fit_database, sample_database

PARENT_CHILD_METADATA = {
    "tables": {
        "parent": {
            "primary_key": "id",
            "columns": {"id": "id", "category": "categorical"},
            "foreign_keys": [],
        },
        "child": {
            "primary_key": "id",
            "columns": {"id": "id", "parent_id": "id", "value": "numerical"},
            "foreign_keys": [
                {"column": "parent_id", "references": {"table": "parent", "column": "id"}}
            ],
        },
    }
}

THREE_LEVEL_METADATA = {
    "tables": {
        "grand": {
            "primary_key": "id",
            "columns": {"id": "id", "category": "categorical"},
            "foreign_keys": [],
        },
        "mid": {
            "primary_key": "id",
            "columns": {"id": "id", "grand_id": "id", "filler": "numerical"},
            "foreign_keys": [
                {"column": "grand_id", "references": {"table": "grand", "column": "id"}}
            ],
        },
        "leaf": {
            "primary_key": "id",
            "columns": {"id": "id", "mid_id": "id", "value": "numerical"},
            "foreign_keys": [
                {"column": "mid_id", "references": {"table": "mid", "column": "id"}}
            ],
        },
    }
}


def _ids(n: int) -> np.ndarray:
    return np.array([str(i + 1) for i in range(n)], dtype=object)


def make_parent_child_db(n_per_category: int = 500, children_per_parent: int = 2,
                         shift: float = 5.0, seed: int = 0) -> Database:
    """Parent category in {A, B}; child value ~ N(0,1) for A, N(shift,1) for B."""
    rng = np.random.default_rng(seed)
    schema = validate_schema(PARENT_CHILD_METADATA)
    n_parents = 2 * n_per_category
    categories = np.array(["A"] * n_per_category + ["B"] * n_per_category, dtype=object)
    parent = Table(spec=schema.table("parent"),
                   columns={"id": _ids(n_parents), "category": categories})

    parent_idx = np.repeat(np.arange(n_parents), children_per_parent)
    means = np.where(categories[parent_idx] == "B", shift, 0.0)
    values = rng.standard_normal(len(parent_idx)) + means
    child = Table(
        spec=schema.table("child"),
        columns={
            "id": _ids(len(parent_idx)),
            "parent_id": parent.columns["id"][parent_idx],
            "value": values,
        },
    )
    return Database(schema=schema, tables={"parent": parent, "child": child})


def make_three_level_db(n_per_category: int = 500, children_per_parent: int = 2,
                        shift: float = 5.0, seed: int = 0) -> Database:
    """grand -> mid -> leaf chain; mid carries only a constant feature."""
    rng = np.random.default_rng(seed)
    schema = validate_schema(THREE_LEVEL_METADATA)
    n_grand = 2 * n_per_category
    categories = np.array(["A"] * n_per_category + ["B"] * n_per_category, dtype=object)
    grand = Table(spec=schema.table("grand"),
                  columns={"id": _ids(n_grand), "category": categories})

    grand_idx = np.repeat(np.arange(n_grand), children_per_parent)
    mid = Table(
        spec=schema.table("mid"),
        columns={
            "id": _ids(len(grand_idx)),
            "grand_id": grand.columns["id"][grand_idx],
            "filler": np.ones(len(grand_idx)),
        },
    )

    mid_idx = np.repeat(np.arange(mid.n_rows), children_per_parent)
    leaf_cat = categories[grand_idx][mid_idx]
    means = np.where(leaf_cat == "B", shift, 0.0)
    leaf = Table(
        spec=schema.table("leaf"),
        columns={
            "id": _ids(len(mid_idx)),
            "mid_id": mid.columns["id"][mid_idx],
            "value": rng.standard_normal(len(mid_idx)) + means,
        },
    )
    return Database(schema=schema, tables={"grand": grand, "mid": mid, "leaf": leaf})


def conditional_gap(db: Database, child: str, value_col: str, fk_chain: list[tuple[str, str, str]],
                    category_col: str = "category") -> float:
    """|mean(value | ancestor=B) - mean(value | ancestor=A)| resolved over FK hops.

    fk_chain lists (table, fk_column, parent_table) hops from child up to
    the ancestor carrying the category. Returns 0.0 when either category is
    missing, which counts as a conditioning failure.
    """
    rows = np.arange(db.tables[child].n_rows)
    current = child
    for table, fk_col, parent in fk_chain:
        assert table == current
        pk_index = {v: i for i, v in enumerate(db.tables[parent].columns[
            db.schema.table(parent).primary_key])}
        fk_values = db.tables[table].columns[fk_col][rows]
        rows = np.array([pk_index[v] for v in fk_values], dtype=np.int64)
        current = parent
    cats = db.tables[current].columns[category_col][rows]
    values = db.tables[child].columns[value_col]
    mask_a, mask_b = cats == "A", cats == "B"
    if not mask_a.any() or not mask_b.any():
        return 0.0
    return abs(float(values[mask_b].mean()) - float(values[mask_a].mean()))


def three_level_flat(db: Database) -> FlatTable:
    """leaf joined with mid and grand features (value, filler, category)."""
    leaf, mid, grand = db.tables["leaf"], db.tables["mid"], db.tables["grand"]
    mid_index = {v: i for i, v in enumerate(mid.columns["id"])}
    mid_rows = np.array([mid_index[v] for v in leaf.columns["mid_id"]], dtype=np.int64)
    grand_index = {v: i for i, v in enumerate(grand.columns["id"])}
    grand_rows = np.array(
        [grand_index[v] for v in mid.columns["grand_id"][mid_rows]], dtype=np.int64
    )
    return FlatTable(
        columns=(("value", "numerical"), ("mid__filler", "numerical"),
                 ("grand__category", "categorical")),
        data={
            "value": leaf.columns["value"],
            "mid__filler": mid.columns["filler"][mid_rows],
            "grand__category": grand.columns["category"][grand_rows],
        },
    )


@dataclass(frozen=True)
class ConditioningOutcome:
    seed: int
    gap_conditioned: float
    gap_ablation: float
    score_conditioned: float
    score_ablation: float

    def passes(self, gap_high: float = 3.0, gap_low: float = 1.0,
               margin: float = 0.10) -> bool:
        return (
            self.gap_conditioned >= gap_high
            and self.gap_ablation <= gap_low
            and self.score_conditioned - self.score_ablation >= margin
        )


def run_parent_conditioning(seed: int, epochs: int = 300, folds: int = 3) -> ConditioningOutcome:
    """Depth-1 conditioning vs an ablation with condition width forced to 0."""
    db = make_parent_child_db(seed=seed)
    config = TrainConfig(epochs=epochs, max_depth=1)
    chain = [("child", "parent_id", "parent")]

    conditioned = fit_database(db, config, seed=seed)
    synth_c = sample_database(conditioned, scale=1.0, seed=seed + 1)
    gap_c = conditional_gap(synth_c, "child", "value", chain)
    score_c = pc_ld_score(db, synth_c, "child", folds=folds, seed=seed).score

    ablation = fit_database(db, config, seed=seed, condition_depth=0)
    synth_a = sample_database(ablation, scale=1.0, seed=seed + 1)
    gap_a = conditional_gap(synth_a, "child", "value", chain)
    score_a = pc_ld_score(db, synth_a, "child", folds=folds, seed=seed).score

    return ConditioningOutcome(seed=seed, gap_conditioned=gap_c, gap_ablation=gap_a,
                               score_conditioned=score_c, score_ablation=score_a)


def run_grandparent_conditioning(seed: int, epochs: int = 300,
                                 folds: int = 3) -> ConditioningOutcome:
    """Depth-2 conditioning vs depth-1 on the three-level chain."""
    db = make_three_level_db(seed=seed)
    chain = [("leaf", "mid_id", "mid"), ("mid", "grand_id", "grand")]
    flat_real = three_level_flat(db)

    def run(depth: int) -> tuple[float, float]:
        config = TrainConfig(epochs=epochs, max_depth=depth)
        model = fit_database(db, config, seed=seed)
        synth = sample_database(model, scale=1.0, seed=seed + 1)
        gap = conditional_gap(synth, "leaf", "value", chain)
        score = ld_score(flat_real, three_level_flat(synth), folds=folds, seed=seed).score
        return gap, score

    gap_2, score_2 = run(2)
    gap_1, score_1 = run(1)
    return ConditioningOutcome(seed=seed, gap_conditioned=gap_2, gap_ablation=gap_1,
                               score_conditioned=score_2, score_ablation=score_1)
