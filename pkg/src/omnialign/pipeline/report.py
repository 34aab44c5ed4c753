"""Plain-text tables, CSV loss curves and JSON stage reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(rows: Sequence[Mapping], columns: Sequence[str], title: str | None = None) -> str:
    cells = [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    line = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    out = [] if title is None else [title]
    out += [line, "  ".join("-" * w for w in widths)]
    out += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(out)


def loss_table(losses: Mapping[str, Sequence[float]], window: int = 20) -> list[dict]:
    """Per-modality first, final-window mean and relative drop of a loss curve."""
    rows = []
    for name, curve in losses.items():
        if not curve:
            continue
        first = float(curve[0])
        last = float(sum(curve[-window:]) / len(curve[-window:]))
        rows.append({"modality": name, "steps": len(curve), "first": first, "last": last,
                     "drop": 1.0 - last / first if first else 0.0})
    return rows


def write_loss_csv(losses: Mapping[str, Sequence[float]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(losses)
    n = max((len(v) for v in losses.values()), default=0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *names])
        for i in range(n):
            w.writerow([i, *[repr(float(losses[k][i])) if i < len(losses[k]) else "" for k in names]])
    return path


def write_json(data, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path
