"""Grid runner: train + evaluate one cell per configuration, then tabulate.

Cells share the base seed and therefore the same train/test corpora; a
failing cell is recorded and the rest of the grid still runs.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import pathlib
import threading
from dataclasses import dataclass
from typing import Sequence

import openpyxl

import utils
from config import RunConfig
from errors import ValidationError
from evaluation import EvalReport, evaluate
from synth_data import synth_generate
from training import train
from workers import SweepCellWorker, report

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("cell", "status", "alpha", "beta", "batch_size", "backend", "attention", "tau",
                 "p_at_1", "mean_retrieved_hamming", "mean_oracle_hamming", "head_hit_rate", "tail_hit_rate",
                 "token_accuracy", "head_f1", "tail_f1", "first_loss", "final_loss", "error")


@dataclass
class SweepRow:
    cell: int
    overrides: dict
    config: RunConfig
    report: EvalReport | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None

    def table_row(self) -> dict:
        row = {"cell": self.cell, "status": "ok" if self.ok else "failed"}
        for key in ("alpha", "beta", "batch_size", "backend", "attention", "tau"):
            row[key] = getattr(self.config, key)
        rep = self.report
        row["p_at_1"] = rep.p_at_1 if rep else None
        row["mean_retrieved_hamming"] = rep.mean_retrieved_hamming if rep else None
        row["mean_oracle_hamming"] = rep.mean_oracle_hamming if rep else None
        row["head_hit_rate"] = rep.head_hit_rate if rep else None
        row["tail_hit_rate"] = rep.tail_hit_rate if rep else None
        for key in ("token_accuracy", "head_f1", "tail_f1"):
            row[key] = getattr(rep, key) if rep else None
        row["first_loss"] = rep.loss_curve[0] if rep and rep.loss_curve else None
        row["final_loss"] = rep.loss_curve[-1] if rep and rep.loss_curve else None
        row["error"] = self.error
        return row

    def document(self) -> dict:
        return {"cell": self.cell, "overrides": self.overrides, "status": "ok" if self.ok else "failed",
                "error": self.error, "metrics": self.report.metrics() if self.report else None}


def load_grid(path) -> dict:
    grid = utils.load_json(path)
    if not isinstance(grid, dict):
        raise ValidationError(f"{path} must hold an object of key -> list of values")
    return grid


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product in the key order given; scalar values count as one-element lists."""
    if not grid:
        raise ValidationError("sweep grid is empty")
    keys = list(grid)
    axes = [v if isinstance(v, list) else [v] for v in grid.values()]
    if any(len(a) == 0 for a in axes):
        empty = [k for k, a in zip(keys, axes) if not a]
        raise ValidationError(f"grid axes without values: {', '.join(empty)}")
    return [dict(zip(keys, combo)) for combo in itertools.product(*axes)]


class CorpusCache:
    """Train/test corpora keyed by the settings that shape them; shared by worker threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._corpora = {}

    def get(self, config: RunConfig):
        key = (config.seed, config.n_train, config.n_test, config.noise, config.d_t)
        with self._lock:
            if key not in self._corpora:
                train_records = synth_generate(config.n_train, seed=config.seed, noise=config.noise, d_t=config.d_t)
                test_records = synth_generate(config.n_test, seed=config.seed + 1, noise=config.noise, d_t=config.d_t)
                self._corpora[key] = (train_records, test_records)
            return self._corpora[key]


def run_cell(config: RunConfig, train_records, test_records, worker=None) -> EvalReport:
    result = train(config, train_records, worker=worker)
    report(worker, "STATE:EVAL")
    return evaluate(result.model, config, train_records, test_records, result.loss_curve)


def run_sweep(base: RunConfig, grid: dict, max_workers: int | None = None) -> list[SweepRow]:
    """Run every grid cell; rows come back in grid order whatever the thread scheduling."""
    rows = []
    for i, overrides in enumerate(expand_grid(grid)):
        try:
            rows.append(SweepRow(cell=i, overrides=overrides, config=base.replace(**overrides)))
        except ValidationError as e:
            rows.append(SweepRow(cell=i, overrides=overrides, config=base, error=str(e)))
    cache = CorpusCache()
    pending = [row for row in rows if row.error is None]
    width = max(1, max_workers or base.sweep_workers)

    def cell_operation(row, worker=None):
        report(worker, "STATE:DATA")
        train_records, test_records = cache.get(row.config)
        return run_cell(row.config, train_records, test_records, worker=worker)

    for start in range(0, len(pending), width):
        chunk = pending[start:start + width]
        workers = [SweepCellWorker(cell_operation, row, name=f"sweep-cell-{row.cell}") for row in chunk]
        for w in workers:
            w.start()
        for row, w in zip(chunk, workers):
            success, message = w.wait()
            if success:
                row.report = w.result
            else:
                row.error = message
                logger.warning("sweep cell %d failed: %s", row.cell, message)
    return rows


def table_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if v is None else v for k, v in row.table_row().items()})
    return buf.getvalue()


def table_workbook(rows: Sequence[SweepRow]) -> bytes:
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "Sweep"
    ws.append(list(TABLE_COLUMNS))
    for row in rows:
        values = row.table_row()
        ws.append([values[k] for k in TABLE_COLUMNS])
    buf = io.BytesIO()
    wb.save(buf)
    return buf.getvalue()


def summary_text(rows: Sequence[SweepRow]) -> str:
    """Human-readable ranking by p_at_1; failed cells last."""
    ranked = sorted((r for r in rows if r.ok), key=lambda r: (-r.report.p_at_1, r.cell))
    lines = [f"{len(rows)} cells, {len(ranked)} succeeded", ""]
    for r in ranked:
        settings = ", ".join(f"{k}={v}" for k, v in r.overrides.items())
        lines.append(f"p@1 {r.report.p_at_1:.4f}  hamming {r.report.mean_retrieved_hamming:.3f}  "
                     f"head {r.report.head_hit_rate:.3f}  tail {r.report.tail_hit_rate:.3f}  "
                     f"tokens {r.report.token_accuracy:.4f}  f1 {r.report.head_f1:.3f}/{r.report.tail_f1:.3f}  "
                     f"[{settings}]")
    for r in rows:
        if not r.ok:
            settings = ", ".join(f"{k}={v}" for k, v in r.overrides.items())
            lines.append(f"FAILED  [{settings}]  {r.error}")
    return "\n".join(lines) + "\n"


def write_sweep_outputs(out_dir, rows: Sequence[SweepRow]) -> dict:
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": utils.atomic_write_text(out_dir / "sweep.json",
                                        json.dumps([r.document() for r in rows], indent=2) + "\n"),
        "csv": utils.atomic_write_text(out_dir / "sweep.csv", table_csv(rows)),
        "xlsx": utils.atomic_write_bytes(out_dir / "sweep.xlsx", table_workbook(rows)),
        "summary": utils.atomic_write_text(out_dir / "summary.txt", summary_text(rows)),
    }
    logger.info("wrote sweep table for %d cells to %s", len(rows), out_dir)
    return paths
