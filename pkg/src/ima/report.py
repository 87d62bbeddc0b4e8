"""Result tables: baseline metrics plus per-strategy deltas.

A negative delta is an improvement over the baseline.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

FORMATS = ("csv", "md", "json")


@dataclass
class ResultRow:
    strategy: str
    mse: float
    mae: float
    delta_mse: float
    delta_mae: float


@dataclass
class ResultTable:
    dataset: str
    model: str
    baseline_mse: float
    baseline_mae: float
    rows: list[ResultRow] = field(default_factory=list)

    def add(self, strategy: str, mse: float, mae: float) -> ResultRow:
        # adding 0.0 turns a -0.0 delta into +0.0
        row = ResultRow(strategy, mse, mae, (mse - self.baseline_mse) + 0.0, (mae - self.baseline_mae) + 0.0)
        self.rows.append(row)
        return row

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultTable":
        rows = [ResultRow(**r) for r in doc["rows"]]
        return cls(doc["dataset"], doc["model"], doc["baseline_mse"], doc["baseline_mae"], rows)


def format_delta(value: float) -> str:
    return f"{value + 0.0:.2E}"


def format_absolute(value: float) -> str:
    return f"{value:.6g}"


def _best_rows(rt: ResultTable) -> tuple[int | None, int | None]:
    best = []
    for key in ("delta_mse", "delta_mae"):
        values = [getattr(r, key) for r in rt.rows]
        lowest = min(values, default=0.0)
        best.append(values.index(lowest) if lowest < 0 else None)
    return best[0], best[1]


def render(rt: ResultTable, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rt.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["strategy", "MSE", "MAE"])
        writer.writerow(["Baseline", format_absolute(rt.baseline_mse), format_absolute(rt.baseline_mae)])
        for r in rt.rows:
            writer.writerow([r.strategy, format_delta(r.delta_mse), format_delta(r.delta_mae)])
        return buf.getvalue()
    if fmt == "md":
        best_mse, best_mae = _best_rows(rt)
        lines = [
            f"Dataset: {rt.dataset}; forecaster: {rt.model}. "
            "Strategy rows are deltas against the baseline (negative = better); best in bold.",
            "",
            "| Strategy | MSE | MAE |",
            "|---|---|---|",
            f"| Baseline | {format_absolute(rt.baseline_mse)} | {format_absolute(rt.baseline_mae)} |",
        ]
        for i, r in enumerate(rt.rows):
            mse = format_delta(r.delta_mse)
            mae = format_delta(r.delta_mae)
            if i == best_mse:
                mse = f"**{mse}**"
            if i == best_mae:
                mae = f"**{mae}**"
            lines.append(f"| {r.strategy} | {mse} | {mae} |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def emit_report(rt: ResultTable, fmt: str, path: str | Path) -> Path:
    text = render(rt, fmt)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def load_report(path: str | Path) -> ResultTable:
    return ResultTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
