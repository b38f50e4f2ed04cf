"""Reversible row encodings and ancestor-condition vectors.

Continuous columns use mode-specific normalization: a Gaussian mixture is
fitted per column, a value is expressed as a within-mode offset
alpha = (x - mu_m) / (4 * sigma_m) clipped to [-1, 1] plus a one-hot mode
indicator. Categorical columns become plain one-hots. The per-table
RowLayout records where each column's span lives inside the encoded row;
the ConditionLayout concatenates ancestor-row encodings in a fixed slot
order so child generators and critics see a constant-width condition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from .dataset import Table
from .schema import ForeignKey, RelationalSchema, ancestors

ALPHA_SCALE = 4.0
PRUNE_WEIGHT = 0.005


class TransformError(Exception):
    pass


class WidthMismatch(TransformError):
    pass


class MissingAncestorRow(TransformError):
    pass


@dataclass
class ContinuousEncoder:
    """Gaussian-mixture column encoder; width = 1 alpha + M mode indicator."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    integer: bool = False

    @property
    def n_modes(self) -> int:
        return len(self.weights)

    @property
    def width(self) -> int:
        return 1 + self.n_modes

    def _responsibilities(self, values: np.ndarray) -> np.ndarray:
        # p(mode | x) ~ pi_m * N(x; mu_m, sigma_m), computed in log space
        x = values[:, None]
        log_p = (
            np.log(self.weights)[None, :]
            - np.log(self.stds)[None, :]
            - 0.5 * ((x - self.means[None, :]) / self.stds[None, :]) ** 2
        )
        log_p -= log_p.max(axis=1, keepdims=True)
        p = np.exp(log_p)
        return p / p.sum(axis=1, keepdims=True)

    def encode_batch(self, values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        n = len(values)
        out = np.zeros((n, self.width))
        if self.n_modes == 1:
            modes = np.zeros(n, dtype=np.int64)
        else:
            resp = self._responsibilities(values)
            cum = np.cumsum(resp, axis=1)
            u = rng.random((n, 1))
            modes = (u > cum).sum(axis=1)
        alpha = (values - self.means[modes]) / (ALPHA_SCALE * self.stds[modes])
        out[:, 0] = np.clip(alpha, -1.0, 1.0)
        out[np.arange(n), 1 + modes] = 1.0
        return out

    def decode_batch(self, block: np.ndarray) -> np.ndarray:
        if block.shape[1] != self.width:
            raise WidthMismatch(f"expected width {self.width}, got {block.shape[1]}")
        modes = np.argmax(block[:, 1:], axis=1)
        alpha = np.clip(block[:, 0], -1.0, 1.0)
        values = alpha * ALPHA_SCALE * self.stds[modes] + self.means[modes]
        if self.integer:
            values = np.rint(values)
        return values


@dataclass
class DiscreteEncoder:
    """One-hot category encoder with empirical frequencies."""

    categories: tuple[str, ...]
    frequencies: np.ndarray

    @property
    def width(self) -> int:
        return len(self.categories)

    def encode_batch(self, values: np.ndarray) -> np.ndarray:
        index = {cat: i for i, cat in enumerate(self.categories)}
        out = np.zeros((len(values), self.width))
        for row, value in enumerate(values):
            try:
                out[row, index[value]] = 1.0
            except KeyError:
                raise TransformError(f"value {value!r} not in category vocabulary") from None
        return out

    def decode_batch(self, block: np.ndarray) -> np.ndarray:
        if block.shape[1] != self.width:
            raise WidthMismatch(f"expected width {self.width}, got {block.shape[1]}")
        picks = np.argmax(block, axis=1)
        return np.array([self.categories[i] for i in picks], dtype=object)


def fit_continuous(values, max_modes: int = 10, seed: int = 0, integer: bool = False) -> ContinuousEncoder:
    """Fit a bounded Gaussian mixture by EM and prune negligible modes.

    Candidate mixtures with 1..max_modes components are fitted with
    k-means++ initialization (100 EM iterations, log-likelihood tolerance
    1e-6) and the BIC winner is kept; components below weight 0.005 are
    pruned and the rest renormalized. A constant column degenerates to one
    mode with sigma = max(|mu|, 1) * 1e-6.
    """
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if len(values) == 0:
        raise TransformError("cannot fit an encoder on an empty column")
    distinct = np.unique(values)
    if len(distinct) < 2:
        mu = float(distinct[0])
        sigma = max(abs(mu), 1.0) * 1e-6
        return ContinuousEncoder(
            weights=np.array([1.0]), means=np.array([mu]), stds=np.array([sigma]), integer=integer
        )

    x = values[:, None]
    best = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for k in range(1, min(max_modes, len(distinct)) + 1):
            gm = GaussianMixture(
                n_components=k,
                covariance_type="full",
                max_iter=100,
                tol=1e-6,
                init_params="k-means++",
                reg_covar=1e-9,
                random_state=seed % (2 ** 32),
            ).fit(x)
            bic = gm.bic(x)
            if best is None or bic < best[0]:
                best = (bic, gm)
    gm = best[1]

    weights = gm.weights_.copy()
    means = gm.means_[:, 0].copy()
    stds = np.sqrt(gm.covariances_[:, 0, 0])
    keep = weights >= PRUNE_WEIGHT
    if not keep.any():
        keep[np.argmax(weights)] = True
    weights, means, stds = weights[keep], means[keep], stds[keep]
    weights = weights / weights.sum()
    order = np.argsort(means)
    return ContinuousEncoder(
        weights=weights[order], means=means[order], stds=np.maximum(stds[order], 1e-9), integer=integer
    )


def fit_discrete(values) -> DiscreteEncoder:
    values = np.asarray(values, dtype=object)
    categories, counts = np.unique(values.astype(str), return_counts=True)
    return DiscreteEncoder(categories=tuple(categories), frequencies=counts / counts.sum())


@dataclass(frozen=True)
class ColumnSpan:
    column: str
    offset: int
    width: int
    encoder: ContinuousEncoder | DiscreteEncoder

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.encoder, DiscreteEncoder)


@dataclass(frozen=True)
class RowLayout:
    """Contiguous per-column spans covering [0, width) of an encoded row."""

    spans: tuple[ColumnSpan, ...]

    @property
    def width(self) -> int:
        return sum(span.width for span in self.spans)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(span.column for span in self.spans)

    def softmax_spans(self) -> list[tuple[int, int]]:
        """(offset, width) of every one-hot region: categories and mode indicators."""
        spans = []
        for span in self.spans:
            if span.is_discrete:
                spans.append((span.offset, span.width))
            else:
                spans.append((span.offset + 1, span.width - 1))
        return spans

    def tanh_positions(self) -> list[int]:
        return [span.offset for span in self.spans if not span.is_discrete]

    def discrete_spans(self) -> list[ColumnSpan]:
        return [span for span in self.spans if span.is_discrete]


def fit_table_encoders(table: Table, max_modes: int = 10, seed: int = 0) -> RowLayout:
    """One encoder per feature column, laid out in spec order."""
    spans = []
    offset = 0
    for i, (name, kind, values) in enumerate(table.feature_items()):
        if kind == "categorical":
            encoder = fit_discrete(values)
        else:
            encoder = fit_continuous(values, max_modes=max_modes, seed=seed + i, integer=(kind == "integer"))
        spans.append(ColumnSpan(column=name, offset=offset, width=encoder.width, encoder=encoder))
        offset += encoder.width
    return RowLayout(spans=tuple(spans))


def encode_table(layout: RowLayout, table: Table, rng: np.random.Generator) -> np.ndarray:
    """Encode all rows at once; mode sampling draws from rng per value."""
    n = table.n_rows
    out = np.zeros((n, layout.width))
    for span in layout.spans:
        values = table.columns[span.column]
        if span.is_discrete:
            block = span.encoder.encode_batch(values)
        else:
            block = span.encoder.encode_batch(values, rng)
        out[:, span.offset:span.offset + span.width] = block
    return out


def decode_table(layout: RowLayout, matrix: np.ndarray) -> dict[str, np.ndarray]:
    if matrix.ndim != 2 or matrix.shape[1] != layout.width:
        raise WidthMismatch(f"expected {layout.width} columns, got {matrix.shape}")
    out = {}
    for span in layout.spans:
        block = matrix[:, span.offset:span.offset + span.width]
        out[span.column] = span.encoder.decode_batch(block)
    return out


def encode_row(layout: RowLayout, row: dict[str, object], rng: np.random.Generator) -> np.ndarray:
    """Encode a single row (mapping of feature column to value)."""
    vector = np.zeros(layout.width)
    for span in layout.spans:
        value = row[span.column]
        if span.is_discrete:
            block = span.encoder.encode_batch(np.array([value], dtype=object))
        else:
            block = span.encoder.encode_batch(np.array([value], dtype=np.float64), rng)
        vector[span.offset:span.offset + span.width] = block[0]
    return vector


def decode_row(layout: RowLayout, vector: np.ndarray) -> dict[str, object]:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (layout.width,):
        raise WidthMismatch(f"expected vector of width {layout.width}, got {vector.shape}")
    decoded = decode_table(layout, vector[None, :])
    return {name: decoded[name][0] for name in layout.column_names}


@dataclass(frozen=True)
class ConditionSlot:
    """One ancestor row feeding the condition: reached via fk_path from the child."""

    table: str
    fk_path: tuple[ForeignKey, ...]
    depth: int
    layout: RowLayout


@dataclass(frozen=True)
class ConditionLayout:
    slots: tuple[ConditionSlot, ...] = field(default_factory=tuple)

    @property
    def width(self) -> int:
        return sum(slot.layout.width for slot in self.slots)


def build_condition_layout(
    schema: RelationalSchema,
    table: str,
    layouts: dict[str, RowLayout],
    max_depth: int,
) -> ConditionLayout:
    """Condition slots in ancestors() order.

    Depth-1 slots: one per declared FK (several FKs to the same parent each
    contribute their own slot), ordered by (parent name, declaration
    order). Depth-2 slots: one per distinct grandparent table, reached via
    the first FK path in slot order; ordered by grandparent name.
    """
    if max_depth < 0 or max_depth > 2:
        raise ValueError("max_depth must be 0, 1 or 2")
    slots: list[ConditionSlot] = []
    if max_depth == 0:
        return ConditionLayout()

    fks = schema.foreign_keys_of(table)
    depth1 = sorted(range(len(fks)), key=lambda i: (fks[i].parent_table, i))
    for i in depth1:
        slots.append(ConditionSlot(table=fks[i].parent_table, fk_path=(fks[i],),
                                   depth=1, layout=layouts[fks[i].parent_table]))

    if max_depth == 2:
        seen: dict[str, tuple[ForeignKey, ...]] = {}
        for slot in list(slots):
            parent_fks = schema.foreign_keys_of(slot.table)
            order = sorted(range(len(parent_fks)), key=lambda i: (parent_fks[i].parent_table, i))
            for i in order:
                grand = parent_fks[i].parent_table
                if grand not in seen:
                    seen[grand] = slot.fk_path + (parent_fks[i],)
        for grand in sorted(seen):
            slots.append(ConditionSlot(table=grand, fk_path=seen[grand], depth=2,
                                       layout=layouts[grand]))
    return ConditionLayout(slots=tuple(slots))


def build_condition(
    layout: ConditionLayout,
    ancestor_rows: list[dict[str, object]],
    rng: np.random.Generator,
) -> np.ndarray:
    """Concatenate the encoded feature columns of one ancestor row per slot."""
    if len(ancestor_rows) != len(layout.slots):
        raise MissingAncestorRow(
            f"expected {len(layout.slots)} ancestor rows, got {len(ancestor_rows)}"
        )
    if not layout.slots:
        return np.zeros(0)
    parts = []
    for slot, row in zip(layout.slots, ancestor_rows):
        if row is None:
            raise MissingAncestorRow(f"no row supplied for ancestor {slot.table!r}")
        parts.append(encode_row(slot.layout, row, rng))
    return np.concatenate(parts)


def gather_conditions(
    layout: ConditionLayout,
    encoded_ancestors: dict[str, np.ndarray],
    row_indices: list[np.ndarray],
    n_rows: int,
) -> np.ndarray:
    """Batch condition matrix from pre-encoded ancestor tables.

    row_indices[i] maps each child row to its ancestor row for slot i.
    """
    out = np.zeros((n_rows, layout.width))
    offset = 0
    for slot, idx in zip(layout.slots, row_indices):
        enc = encoded_ancestors[slot.table]
        out[:, offset:offset + slot.layout.width] = enc[idx]
        offset += slot.layout.width
    return out
