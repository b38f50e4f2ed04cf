"""Logistic-detection fidelity metrics.

A logistic regression is trained to separate real from synthetic rows;
its cross-validated ROC AUC maps to a score via
score = 1 - [2 * max(0.5, auc) - 1], so 1.0 means indistinguishable and
0.0 means trivially separable. The per-table variant works on standalone
tables, the parent-child variant on the denormalized child table, which
is what exposes broken cross-table relationships.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Database
from .schema import denormalize


class SingleClass(Exception):
    pass


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 * P(score_pos = score_neg) via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("roc_auc needs both classes present")

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def eq4_score(auc: float) -> float:
    return 1.0 - (2.0 * max(0.5, auc) - 1.0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    mask = z >= 0
    out[mask] = 1.0 / (1.0 + np.exp(-z[mask]))
    e = np.exp(z[~mask])
    out[~mask] = e / (1.0 + e)
    return out


def train_logistic(features: np.ndarray, labels: np.ndarray, l2: float = 1e-3,
                   epochs: int = 500, lr: float = 1.0) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on L2-regularized logistic loss.

    Features are expected standardized; the intercept is unregularized.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(np.unique(labels)) < 2:
        raise SingleClass("training labels contain a single class")
    n = len(labels)
    w = np.zeros(features.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = _sigmoid(features @ w + b)
        err = p - labels
        w -= lr * (features.T @ err / n + l2 * w)
        b -= lr * float(err.mean())
    return w, b


def _one_hot_vocab(real, synth) -> list[str]:
    return sorted(set(str(v) for v in real) | set(str(v) for v in synth))


def _feature_matrices(real_items, synth_items) -> tuple[np.ndarray, np.ndarray]:
    """Numeric design matrices with a shared encoding for both tables.

    Categorical columns become one-hots, continuous columns pass through,
    and every one-hot block is crossed with every continuous column. The
    products give the (still linear) logistic model per-category slopes,
    without which conditional-mean structure between joined tables is
    invisible to it.
    """
    real_cat, real_num, synth_cat, synth_num = [], [], [], []
    for (name, kind, real_vals), (s_name, s_kind, synth_vals) in zip(real_items, synth_items):
        if name != s_name or kind != s_kind:
            raise ValueError(f"feature mismatch: {name}/{kind} vs {s_name}/{s_kind}")
        if kind == "categorical":
            vocab = _one_hot_vocab(real_vals, synth_vals)
            index = {cat: i for i, cat in enumerate(vocab)}
            for vals, blocks in ((real_vals, real_cat), (synth_vals, synth_cat)):
                block = np.zeros((len(vals), len(vocab)))
                for row, v in enumerate(vals):
                    block[row, index[str(v)]] = 1.0
                blocks.append(block)
        else:
            real_num.append(np.asarray(real_vals, dtype=np.float64)[:, None])
            synth_num.append(np.asarray(synth_vals, dtype=np.float64)[:, None])

    def assemble(cat_blocks, num_cols):
        parts = list(cat_blocks) + list(num_cols)
        for block in cat_blocks:
            for col in num_cols:
                parts.append(block * col)
        if not parts:
            raise ValueError("no feature columns to classify on")
        return np.concatenate(parts, axis=1)

    return assemble(real_cat, real_num), assemble(synth_cat, synth_num)


def _stratified_folds(labels: np.ndarray, folds: int,
                      rng: np.random.Generator) -> list[np.ndarray]:
    """Index arrays of validation folds, each holding both classes."""
    fold_members: list[list[np.ndarray]] = [[] for _ in range(folds)]
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for k, chunk in enumerate(np.array_split(idx, folds)):
            fold_members[k].append(chunk)
    return [np.concatenate(parts) for parts in fold_members]


@dataclass(frozen=True)
class LdResult:
    score: float
    auc: float
    n_real: int
    n_synth: int


def ld_score(real, synth, folds: int = 3, seed: int = 0, l2: float = 1e-3,
             epochs: int = 500) -> LdResult:
    """Logistic-detection score for one table pair.

    Both arguments need a feature_items() view (Table or FlatTable). The
    larger class is subsampled to match the smaller one, features are
    one-hot/standardized per train fold, and the mean validation AUC over
    stratified folds feeds the score mapping.
    """
    real_items = real.feature_items()
    synth_items = synth.feature_items()
    x_real, x_synth = _feature_matrices(real_items, synth_items)
    n_real, n_synth = x_real.shape[0], x_synth.shape[0]
    if min(n_real, n_synth) < max(2, folds):
        raise SingleClass(
            f"need at least {max(2, folds)} rows per class, got real={n_real} synth={n_synth}"
        )

    rng = np.random.default_rng(seed)
    m = min(n_real, n_synth)
    if n_real > m:
        x_real = x_real[rng.choice(n_real, size=m, replace=False)]
    if n_synth > m:
        x_synth = x_synth[rng.choice(n_synth, size=m, replace=False)]

    x = np.concatenate([x_real, x_synth], axis=0)
    y = np.concatenate([np.ones(m), np.zeros(m)])

    aucs = []
    for val_idx in _stratified_folds(y, folds, rng):
        mask = np.ones(len(y), dtype=bool)
        mask[val_idx] = False
        x_train, y_train = x[mask], y[mask]
        mean = x_train.mean(axis=0)
        std = x_train.std(axis=0)
        std[std == 0.0] = 1.0
        w, b = train_logistic((x_train - mean) / std, y_train, l2=l2, epochs=epochs)
        val_scores = ((x[val_idx] - mean) / std) @ w + b
        aucs.append(roc_auc(val_scores, y[val_idx]))
    auc = float(np.mean(aucs))
    return LdResult(score=eq4_score(auc), auc=auc, n_real=n_real, n_synth=n_synth)


def pc_ld_score(real_db: Database, synth_db: Database, child: str,
                folds: int = 3, seed: int = 0) -> LdResult:
    """ld_score on the denormalized child table of both databases."""
    return ld_score(denormalize(real_db, child), denormalize(synth_db, child),
                    folds=folds, seed=seed)


@dataclass(frozen=True)
class TableDetection:
    ld: float
    auc: float
    n_real: int
    n_synth: int


@dataclass(frozen=True)
class RelationshipDetection:
    child: str
    pc_ld: float
    auc: float


@dataclass(frozen=True)
class DetectionReport:
    tables: dict[str, TableDetection]
    relationships: tuple[RelationshipDetection, ...]
    avg_ld: float
    avg_pc_ld: float | None
    folds: int
    seed: int

    def to_json(self) -> dict:
        return {
            "tables": {name: {"ld": t.ld, "auc": t.auc} for name, t in self.tables.items()},
            "relationships": [
                {"child": r.child, "pc_ld": r.pc_ld, "auc": r.auc} for r in self.relationships
            ],
            "avg_ld": self.avg_ld,
            "avg_pc_ld": self.avg_pc_ld,
            "folds": self.folds,
            "seed": self.seed,
        }


def build_report(real_db: Database, synth_db: Database, folds: int = 3,
                 seed: int = 0) -> DetectionReport:
    """Per-table LD plus per-child-table P-C LD over all FK relationships."""
    tables = {}
    for name in sorted(real_db.schema.tables):
        result = ld_score(real_db.tables[name], synth_db.tables[name], folds=folds, seed=seed)
        tables[name] = TableDetection(ld=result.score, auc=result.auc,
                                      n_real=result.n_real, n_synth=result.n_synth)

    children = sorted({fk.child_table for fk in real_db.schema.relationships})
    relationships = []
    for child in children:
        result = pc_ld_score(real_db, synth_db, child, folds=folds, seed=seed)
        relationships.append(RelationshipDetection(child=child, pc_ld=result.score, auc=result.auc))

    avg_ld = float(np.mean([t.ld for t in tables.values()]))
    avg_pc_ld = float(np.mean([r.pc_ld for r in relationships])) if relationships else None
    return DetectionReport(tables=tables, relationships=tuple(relationships),
                           avg_ld=avg_ld, avg_pc_ld=avg_pc_ld, folds=folds, seed=seed)
