"""Ablation matrices: parse toggle rows, run each configuration, tabulate results.

A matrix file is CSV with a header naming any of the columns ``branches``,
``osnet``, ``wca``, ``ms``, ``db``.  ``osnet`` selects the default backbone
(1) or the residual alternative (0); ``ms`` selects multi-similarity (1) or
batch-hard triplet (0) as the ranking loss.
"""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError
from .model.network import format_branches, parse_branches

log = logging.getLogger(__name__)

COLUMNS = ("branches", "osnet", "wca", "ms", "db")
BACKBONE_FOR_OSNET = {True: "tiny", False: "tiny-res"}

BRANCH_MATRIX = """branches
G
C
P
C+P
G+C
G+P
G+C+P
"""

TECHNIQUE_MATRIX = """osnet,wca,ms,db
0,0,0,0
0,1,1,1
1,0,0,0
1,1,0,0
1,1,0,1
1,0,1,1
1,1,1,0
1,1,1,1
"""

BUILTIN = {"branches": BRANCH_MATRIX, "techniques": TECHNIQUE_MATRIX}


def _flag(value: str, column: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "x", "y"):
        return True
    if low in ("0", "false", "no", "", "-", "n"):
        return False
    raise ConfigError(f"bad toggle {value!r} in column {column}", field=column)


def parse_matrix(text: str) -> list:
    """Rows of normalised toggles; duplicates are dropped with a warning."""
    reader = csv.DictReader(io.StringIO(text.strip() + "\n"))
    header = [h.strip().lower() for h in (reader.fieldnames or [])]
    unknown = [h for h in header if h not in COLUMNS]
    if unknown:
        raise ConfigError(f"unknown matrix column(s) {unknown}; allowed {list(COLUMNS)}", field="matrix")
    rows, seen = [], set()
    for raw in reader:
        raw = {k.strip().lower(): (v or "") for k, v in raw.items() if k is not None}
        row = {}
        for col in header:
            if col == "branches":
                row[col] = format_branches(parse_branches(raw[col]))
            else:
                row[col] = _flag(raw[col], col)
        key = tuple(sorted(row.items()))
        if key in seen:
            log.warning("duplicate ablation row %s dropped", row)
            continue
        seen.add(key)
        rows.append(row)
    if not rows:
        raise ConfigError("ablation matrix has no rows", field="matrix")
    return rows


def load_matrix(spec: str) -> list:
    if spec in BUILTIN:
        return parse_matrix(BUILTIN[spec])
    try:
        text = Path(spec).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read matrix {spec}: {exc}", field="matrix") from None
    return parse_matrix(text)


def row_config(base: RunConfig, row: dict) -> RunConfig:
    changes = {}
    if "branches" in row:
        changes["branches"] = row["branches"]
    if "osnet" in row:
        changes["backbone"] = BACKBONE_FOR_OSNET[row["osnet"]]
    if "wca" in row:
        changes["wca"] = row["wca"]
    if "ms" in row:
        changes["ranking"] = "ms" if row["ms"] else "triplet"
    if "db" in row:
        changes["drop_block"] = row["db"]
    return base.replace(**changes)


def row_label(row: dict) -> str:
    parts = []
    for col in COLUMNS:
        if col in row:
            v = row[col]
            parts.append(v if col == "branches" else f"{col}{int(v)}")
    return "_".join(parts)


def run_ablation(base: RunConfig, rows: list, out_dir) -> list:
    """Train and evaluate every row with the base seed; returns result rows."""
    from .engine import load_data, train

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = load_data(base)
    results = []
    for n, row in enumerate(rows, start=1):
        cfg = row_config(base, row).validate()
        run_dir = out / f"row{n:02d}_{row_label(row).replace('+', '')}"
        log.info("ablation row %d/%d: %s", n, len(rows), row)
        _, records = train(cfg, run_dir, index=index)
        metrics = records[-1].get("metrics", {})
        results.append({**{k: row[k] for k in row},
                        "r1": metrics.get("rank1", float("nan")),
                        "map_modern": metrics.get("map_modern", float("nan")),
                        "map_legacy": metrics.get("map_legacy", float("nan")),
                        "run": run_dir.name})
    write_results(out / "ablation.csv", results)
    return results


def write_results(path, results: list) -> None:
    if not results:
        return
    cols = list(results[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in results:
            w.writerow({k: (int(v) if isinstance(v, bool) else v) for k, v in r.items()})


def format_table(results: list) -> str:
    """Plain-text table: toggle columns then r1 / mAP (modern) / mAP (legacy) in percent."""
    if not results:
        return ""
    toggles = [c for c in COLUMNS if c in results[0]]
    head = [c.upper() if c != "branches" else "Branch" for c in toggles] + ["r1", "mAP", "mAP(legacy)"]
    lines = ["  ".join(f"{h:>11}" for h in head)]
    for r in results:
        cells = [r[c] if c == "branches" else ("x" if r[c] else "-") for c in toggles]
        cells += [f"{100 * r['r1']:.1f}", f"{100 * r['map_modern']:.1f}", f"{100 * r['map_legacy']:.1f}"]
        lines.append("  ".join(f"{c:>11}" for c in cells))
    return "\n".join(lines)
