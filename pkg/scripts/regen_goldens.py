#!/usr/bin/env python3
"""Regenerate the golden plan files under tests/golden/.

Run after deliberately changing a command plan, then review the diff:

    python scripts/regen_goldens.py
"""
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT))

from tests.catalog_fixtures import FAMILIES, OPERATIONS, render_plan_file  # noqa: E402


def main() -> None:
    golden_dir = ROOT / "tests" / "golden"
    golden_dir.mkdir(exist_ok=True)
    count = 0
    for op_id, _, _ in OPERATIONS:
        for family in FAMILIES:
            path = golden_dir / f"{op_id}__{family}.plan"
            path.write_text(render_plan_file(op_id, family), encoding="utf-8")
            count += 1
    print(f"wrote {count} golden plans to {golden_dir}")


if __name__ == "__main__":
    main()
