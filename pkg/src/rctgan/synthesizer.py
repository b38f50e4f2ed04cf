"""Database-level fitting and synthesis.

Fits one conditional GAN per table (conditions assembled from real
ancestor rows over FK chains), learns per-relationship child-count
histograms, then samples whole databases in topological order so that
every child row can condition on already-synthesized ancestor rows.
Referential integrity of the output holds by construction: foreign keys
are set to the regenerated primary keys of the chosen synthetic parents.
"""

from __future__ import annotations

import pickle
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Database, Table, check_referential_integrity
from .gan import TableGanModel, TrainConfig, fit_table, sample_rows
from .schema import ForeignKey, RelationalSchema, topological_order
from .transform import (
    ConditionLayout,
    RowLayout,
    build_condition_layout,
    encode_table,
    fit_table_encoders,
    gather_conditions,
)

MAGIC = b"RCTG"
FORMAT_VERSION = 1


class IntegrityError(Exception):
    """Raised when fitting is attempted on a database with FK violations."""

    def __init__(self, violations):
        self.violations = violations
        super().__init__(f"{len(violations)} referential-integrity violations, first: {violations[0]}")


class VersionMismatch(Exception):
    pass


class CorruptFile(Exception):
    pass


@dataclass
class CardinalityModel:
    """Empirical distribution of children per parent row, zeros included."""

    counts: np.ndarray
    probs: np.ndarray

    @classmethod
    def fit(cls, children_per_parent: np.ndarray) -> "CardinalityModel":
        counts, freq = np.unique(children_per_parent.astype(np.int64), return_counts=True)
        return cls(counts=counts, probs=freq / freq.sum())

    @property
    def mean(self) -> float:
        return float(np.dot(self.counts, self.probs))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if size == 0:
            return np.zeros(0, dtype=np.int64)
        return rng.choice(self.counts, size=size, p=self.probs)


@dataclass
class PairingModel:
    """FK assignment for multi-parent tables: cardinality runs along the driver."""

    driver: ForeignKey
    others: tuple[ForeignKey, ...]


@dataclass
class DatabaseModel:
    schema: RelationalSchema
    table_models: dict[str, TableGanModel]
    cardinalities: dict[tuple[str, str], CardinalityModel]
    pairings: dict[str, PairingModel]
    condition_depth: int
    row_counts: dict[str, int]
    version: int = FORMAT_VERSION
    synthesis_order: list[str] = field(default_factory=list)


def _derive_seed(seq: np.random.SeedSequence) -> int:
    # 32-bit so downstream library seed params (sklearn) accept it
    return int(seq.generate_state(1, np.uint32)[0])


def _ancestor_indices(
    layout: ConditionLayout,
    tables: dict[str, Table],
    child: Table,
    chosen_parents: dict[tuple[str, str], np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Resolve, per condition slot, the ancestor row index of every child row.

    During fitting the first hop follows the child's real FK values; during
    sampling the caller passes the chosen synthetic parent indices instead.
    Deeper hops always follow the stored FK values of the parent table.
    """
    index_arrays = []
    for slot in layout.slots:
        fk = slot.fk_path[0]
        if chosen_parents is not None:
            rows = chosen_parents[(fk.child_table, fk.child_column)]
        else:
            parent = tables[fk.parent_table]
            pk_index = {v: i for i, v in enumerate(parent.columns[fk.parent_column])}
            rows = np.array(
                [pk_index[v] for v in child.columns[fk.child_column]], dtype=np.int64
            )
        for hop in slot.fk_path[1:]:
            parent = tables[hop.child_table]
            grand = tables[hop.parent_table]
            pk_index = {v: i for i, v in enumerate(grand.columns[hop.parent_column])}
            hop_values = parent.columns[hop.child_column][rows]
            rows = np.array([pk_index[v] for v in hop_values], dtype=np.int64)
        index_arrays.append(rows)
    return index_arrays


def fit_database(
    database: Database,
    config: TrainConfig,
    seed: int = 0,
    *,
    condition_depth: int | None = None,
    epoch_callback=None,
    threads: int = 1,
) -> DatabaseModel:
    """Fit models for every table in topological order.

    condition_depth overrides config.max_depth; 0 disables ancestor
    conditioning entirely (unconditioned ablation runs). Table fits only
    depend on real data, so threads > 1 trains tables concurrently with
    identical results (each table draws from its own seed stream).
    """
    violations = check_referential_integrity(database)
    if violations:
        raise IntegrityError(violations)
    depth = config.max_depth if condition_depth is None else condition_depth

    schema = database.schema
    order = topological_order(schema)
    table_seqs = np.random.SeedSequence(seed).spawn(len(order))

    layouts: dict[str, RowLayout] = {}
    encoded: dict[str, np.ndarray] = {}
    enc_seeds: dict[str, np.random.SeedSequence] = {}
    fit_seeds: dict[str, np.random.SeedSequence] = {}
    for name, seq in zip(order, table_seqs):
        enc_seq, fit_seq = seq.spawn(2)
        enc_seeds[name], fit_seeds[name] = enc_seq, fit_seq
        table = database.tables[name]
        layouts[name] = fit_table_encoders(table, max_modes=config.max_modes,
                                           seed=_derive_seed(enc_seq))
        encoded[name] = encode_table(layouts[name], table, np.random.default_rng(enc_seq))

    def fit_one(name: str) -> TableGanModel:
        table = database.tables[name]
        cond_layout = build_condition_layout(schema, name, layouts, depth)
        idx = _ancestor_indices(cond_layout, database.tables, table)
        conditions = gather_conditions(cond_layout, encoded, idx, table.n_rows)
        return fit_table(
            encoded[name], layouts[name], conditions, config,
            seed=_derive_seed(fit_seeds[name]), table=name,
            condition_layout=cond_layout, epoch_callback=epoch_callback,
        )

    table_models: dict[str, TableGanModel] = {}
    if threads > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for name, model in zip(order, pool.map(fit_one, order)):
                table_models[name] = model
    else:
        for name in order:
            table_models[name] = fit_one(name)

    cardinalities: dict[tuple[str, str], CardinalityModel] = {}
    for fk in schema.relationships:
        parent = database.tables[fk.parent_table]
        child = database.tables[fk.child_table]
        pk_index = {v: i for i, v in enumerate(parent.columns[fk.parent_column])}
        per_parent = np.zeros(parent.n_rows, dtype=np.int64)
        for v in child.columns[fk.child_column]:
            per_parent[pk_index[v]] += 1
        cardinalities[(fk.child_table, fk.child_column)] = CardinalityModel.fit(per_parent)

    pairings: dict[str, PairingModel] = {}
    for name in order:
        fks = schema.foreign_keys_of(name)
        if len(fks) > 1:
            pairings[name] = PairingModel(driver=fks[0], others=tuple(fks[1:]))

    return DatabaseModel(
        schema=schema,
        table_models=table_models,
        cardinalities=cardinalities,
        pairings=pairings,
        condition_depth=depth,
        row_counts={name: database.tables[name].n_rows for name in order},
    )


def sample_database(model: DatabaseModel, scale: float = 1.0, seed: int = 0,
                    progress=None) -> Database:
    """Sample a full synthetic database; integrity holds by construction.

    Root tables get round(scale * original rows) rows; each child table is
    sized by drawing a child count per synthetic driver-parent row from the
    fitted cardinality histogram. If a non-driver parent happens to have
    zero synthetic rows, the child is left empty to preserve integrity.
    """
    if scale <= 0:
        raise ValueError("scale must be > 0")
    schema = model.schema
    order = topological_order(schema)
    table_seqs = np.random.SeedSequence(seed).spawn(len(order))
    model.synthesis_order = []

    tables: dict[str, Table] = {}
    encoded_synth: dict[str, np.ndarray] = {}
    for name, seq in zip(order, table_seqs):
        if progress is not None:
            progress(name)
        model.synthesis_order.append(name)
        gan = model.table_models[name]
        spec = schema.table(name)
        fks = schema.foreign_keys_of(name)
        draw_seq, row_seq, enc_seq = seq.spawn(3)
        rng = np.random.default_rng(draw_seq)
        row_seed = _derive_seed(row_seq)

        if not fks:
            n = int(round(scale * model.row_counts[name]))
            chosen: dict[tuple[str, str], np.ndarray] = {}
        else:
            driver = model.pairings[name].driver if name in model.pairings else fks[0]
            parent_rows = tables[driver.parent_table].n_rows
            counts = model.cardinalities[(name, driver.child_column)].sample(rng, parent_rows)
            driver_idx = np.repeat(np.arange(parent_rows), counts)
            n = len(driver_idx)
            chosen = {(name, driver.child_column): driver_idx}
            for fk in fks:
                if fk.child_column == driver.child_column:
                    continue
                other_rows = tables[fk.parent_table].n_rows
                if other_rows == 0:
                    n = 0
                    break
                chosen[(name, fk.child_column)] = rng.integers(0, other_rows, size=n)
            if n == 0:
                chosen = {(name, fk.child_column): np.zeros(0, dtype=np.int64) for fk in fks}

        idx = _ancestor_indices(gan.condition_layout, tables, None, chosen_parents=chosen)
        conditions = gather_conditions(gan.condition_layout, encoded_synth, idx, n)
        features = sample_rows(gan, conditions, 1, seed=row_seed)

        columns: dict[str, np.ndarray] = {}
        for col, kind in spec.columns:
            if col == spec.primary_key:
                columns[col] = np.array([str(i + 1) for i in range(n)], dtype=object)
            elif kind == "id":
                fk = next(f for f in fks if f.child_column == col)
                parent_pks = tables[fk.parent_table].columns[fk.parent_column]
                columns[col] = parent_pks[chosen[(name, col)]]
            elif kind == "integer":
                columns[col] = features[col].astype(np.int64)
            else:
                columns[col] = features[col]
        tables[name] = Table(spec=spec, columns=columns)
        encoded_synth[name] = encode_table(gan.row_layout, tables[name],
                                           np.random.default_rng(enc_seq))

    return Database(schema=schema, tables=tables)


def save_model(model: DatabaseModel, path) -> None:
    payload = pickle.dumps(model, protocol=4)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", FORMAT_VERSION) + payload)


def load_model(path) -> DatabaseModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CorruptFile(f"{path}: not a model file (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        model = pickle.loads(blob[8:])
    except Exception as exc:
        raise CorruptFile(f"{path}: truncated or corrupt payload ({exc})") from exc
    if not isinstance(model, DatabaseModel):
        raise CorruptFile(f"{path}: payload is not a database model")
    return model
