"""Relational database synthesizer built on row-conditional tabular GANs."""

from .dataset import Database, Table, check_referential_integrity, load_database, write_database
from .detection import build_report, ld_score, pc_ld_score, roc_auc
from .gan import TableGanModel, TrainConfig, fit_table, sample_rows
from .schema import (
    RelationalSchema,
    ancestors,
    denormalize,
    load_metadata,
    topological_order,
    validate_schema,
)
from .synthesizer import DatabaseModel, fit_database, load_model, sample_database, save_model

__version__ = "0.1.0"

__all__ = [
    "Database",
    "DatabaseModel",
    "RelationalSchema",
    "Table",
    "TableGanModel",
    "TrainConfig",
    "ancestors",
    "build_report",
    "check_referential_integrity",
    "denormalize",
    "fit_database",
    "fit_table",
    "ld_score",
    "load_database",
    "load_metadata",
    "load_model",
    "pc_ld_score",
    "roc_auc",
    "sample_database",
    "sample_rows",
    "save_model",
    "topological_order",
    "validate_schema",
    "write_database",
]
