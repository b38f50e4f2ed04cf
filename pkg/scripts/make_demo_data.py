#!/usr/bin/env python3
"""Write a small store/sales demo dataset for trying out the CLI.

Usage: python scripts/make_demo_data.py <output-dir>
"""

import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from rctgan.dataset import write_database
from rctgan.experiments import make_parent_child_db


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    out = pathlib.Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)

    db = make_parent_child_db(n_per_category=200, children_per_parent=3, seed=0)
    write_database(db, out / "data")
    metadata = {
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
    (out / "metadata.json").write_text(json.dumps(metadata, indent=2) + "\n")
    print(f"wrote {out}/metadata.json and {out}/data/*.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
