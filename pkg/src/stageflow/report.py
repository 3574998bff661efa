"""Summary report joining the CSV/JSON artifacts of one run directory."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Optional

from .errors import NotFoundError

TABLE_FILE = "schedules.csv"
SWEEP_FILE = "sweep.csv"
BOUNDARY_FILE = "boundary_report.json"
DIVERGENCE_FILE = "divergence.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "run_manifest.json"


def _read_rows(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _metric_row(raw: dict) -> dict:
    return {
        "schedule": raw["schedule"],
        "frechet": float(raw["frechet"]),
        "energy": float(raw["energy"]),
        "endpoint_cos_vs_LLL": float(raw["endpoint_cos_vs_LLL"]),
        "flops": float(raw["flops"]),
    }


def _divergence_summary(path: Path) -> dict:
    rows = _read_rows(path)
    out = {}
    for branch in sorted({r["branch"] for r in rows}):
        sel = [r for r in rows if r["branch"] == branch]
        cos = [float(r["cos_mean"]) for r in sel]
        k = min(range(len(cos)), key=cos.__getitem__)
        out[branch] = {
            "steps": len(sel),
            "argmin_step": k,
            "argmin_t": float(sel[k]["t"]),
            "cos_first": cos[0],
            "cos_min": cos[k],
            "cos_last": cos[-1],
            # lowest divergence strictly inside the trajectory, above both ends
            "u_shape": 0 < k < len(cos) - 1 and cos[k] < cos[0] and cos[k] < cos[-1],
        }
    return out


def emit_report(artifact_dir, out_name: Optional[str] = SUMMARY_FILE) -> dict:
    """Build the summary from ``schedules.csv`` plus whatever optional artifacts exist.

    Rows carry frechet, energy, endpoint cosine vs the large-only schedule,
    FLOPs and the FLOPs ratio to the large-only row.  Pareto-optimal sweep
    schedules (FLOPs vs Fréchet) are appended as ``sweep`` rows.
    """
    root = Path(artifact_dir)
    table = root / TABLE_FILE
    if not table.exists():
        raise NotFoundError(f"missing artifact {table}; run the 'boundaries' command first")
    rows = [dict(_metric_row(r), source="table") for r in _read_rows(table)]
    ref = next((r for r in rows if r["schedule"] == "LLL"), None)
    if ref is None:
        raise NotFoundError(f"{table} has no LLL row to normalise against")

    summary: dict = {}
    sweep_path = root / SWEEP_FILE
    if sweep_path.exists():
        from .analysis.metrics import pareto_front

        sweep = [_metric_row(r) for r in _read_rows(sweep_path)]
        front = pareto_front([(r["flops"], r["frechet"]) for r in sweep])
        summary["pareto_indices"] = front
        rows.extend(dict(sweep[i], source="sweep") for i in front)
    for r in rows:
        r["flops_ratio_vs_LLL"] = r["flops"] / ref["flops"] if ref["flops"] else None
    summary["rows"] = rows

    boundary_path = root / BOUNDARY_FILE
    if boundary_path.exists():
        summary["boundaries"] = json.loads(boundary_path.read_text())
    divergence_path = root / DIVERGENCE_FILE
    if divergence_path.exists():
        summary["divergence"] = _divergence_summary(divergence_path)
    if out_name:
        (root / out_name).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_table_csv(rows, path) -> Path:
    """``schedules.csv``: same columns as ``sweep.csv``."""
    from .analysis.sweep import write_sweep_csv

    return write_sweep_csv(rows, path)
