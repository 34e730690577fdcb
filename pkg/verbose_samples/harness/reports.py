"""
verbose-samples — Report writers

Deterministic JSON / JSONL / CSV writers (sorted keys, fixed column order)
and a plain-text run summary for terminals.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError

TIMING_COLUMNS = ("mean_latency", "mean_energy", "latency", "energy")


@dataclass
class Table:
    """Named result table; rows are dicts keyed by ``columns``."""

    name: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def add(self, **row: Any) -> None:
        self.rows.append(row)

    def column(self, name: str) -> list[Any]:
        return [r.get(name) for r in self.rows]

    def find(self, **match: Any) -> dict[str, Any] | None:
        for r in self.rows:
            if all(r.get(k) == v for k, v in match.items()):
                return r
        return None

    def as_dict(self) -> dict[str, Any]:
        return {"name": self.name, "columns": self.columns, "rows": self.rows, "meta": self.meta}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: _cell(r.get(k)) for k in self.columns})
        return buf.getvalue()


def _cell(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "|".join(str(x) for x in v)
    return v


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot write {path}: {exc}") from exc
    return path


def write_json(path: str | Path, payload: Any) -> Path:
    return _write(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> Path:
    return _write(Path(path), "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def write_csv(path: str | Path, table: Table) -> Path:
    return _write(Path(path), table.to_csv())


def split_timing(table: Table) -> tuple[Table, Table | None]:
    """(deterministic table, timing table or None); wall-clock columns go to the latter."""
    timing = [c for c in table.columns if c in TIMING_COLUMNS]
    if not timing:
        return table, None
    keep = [c for c in table.columns if c not in TIMING_COLUMNS]
    main = Table(table.name, keep, [{k: r.get(k) for k in keep} for r in table.rows], dict(table.meta))
    return main, Table(f"{table.name}_timing", list(table.columns), list(table.rows), dict(table.meta))


def write_table(out_dir: str | Path, table: Table) -> list[Path]:
    """<name>.json + <name>.csv, and <name>_timing.* when the table has wall-clock columns."""
    out = Path(out_dir)
    written = []
    for t in split_timing(table):
        if t is not None:
            written += [write_json(out / f"{t.name}.json", t.as_dict()), write_csv(out / f"{t.name}.csv", t)]
    return written


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot read {path}: {exc}") from exc
    try:
        return [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"{path} is not JSONL: {exc}") from exc


# ---------------------------------------------------------------------------
# Terminal summary
# ---------------------------------------------------------------------------
def format_summary(
    command: str,
    summary: dict[str, Any],
    tables: Sequence[Table] = (),
    artifacts: Sequence[str | Path] = (),
) -> str:
    lines = [f"COMMAND: {command}", "", "SUMMARY:"]
    for k in sorted(summary):
        v = summary[k]
        lines.append(f"  {k}: {v:.4f}" if isinstance(v, float) else f"  {k}: {v}")
    for t in tables:
        lines.append("")
        lines.append(f"TABLE {t.name}:")
        lines.append("  " + " | ".join(t.columns))
        for r in t.rows:
            cells = [f"{r.get(c):.4f}" if isinstance(r.get(c), float) else str(r.get(c, "")) for c in t.columns]
            lines.append("  " + " | ".join(cells))
    if artifacts:
        lines.append("")
        lines.append("ARTIFACTS:")
        for a in artifacts:
            lines.append(f"  * {a}")
    return "\n".join(lines)
