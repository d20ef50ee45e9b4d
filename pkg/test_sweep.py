import csv
import io
import json

import openpyxl
import pytest

import sweep
from config import RunConfig
from errors import ValidationError
from evaluation import evaluate
from synth_data import synth_generate
from training import train


def base_config():
    return RunConfig.desk().replace(steps=2, batch_size=4, n_train=24, n_test=8)


def test_expand_grid_order_and_scalars():
    cells = sweep.expand_grid({"alpha": [0.0, 2.0], "beta": 0.5, "backend": ["hyperbolic", "cosine"]})
    assert cells[0] == {"alpha": 0.0, "beta": 0.5, "backend": "hyperbolic"}
    assert cells[1] == {"alpha": 0.0, "beta": 0.5, "backend": "cosine"}
    assert len(cells) == 4
    with pytest.raises(ValidationError):
        sweep.expand_grid({})
    with pytest.raises(ValidationError):
        sweep.expand_grid({"alpha": []})


def test_single_cell_matches_direct_run():
    base = base_config()
    [row] = sweep.run_sweep(base, {"alpha": [2.0]})
    train_records = synth_generate(base.n_train, seed=base.seed, noise=base.noise, d_t=base.d_t)
    test_records = synth_generate(base.n_test, seed=base.seed + 1, noise=base.noise, d_t=base.d_t)
    result = train(base, train_records)
    direct = evaluate(result.model, base, train_records, test_records, result.loss_curve)
    assert row.ok
    assert row.report.metrics() == direct.metrics()


def test_grid_rows_and_failures():
    rows = sweep.run_sweep(base_config(), {"alpha": [0.0, 2.0], "batch_size": [4, 1, 100]}, max_workers=2)
    assert [r.cell for r in rows] == list(range(6))
    by_cell = {(r.overrides["alpha"], r.overrides["batch_size"]): r for r in rows}
    assert by_cell[(0.0, 4)].ok and by_cell[(2.0, 4)].ok
    assert by_cell[(0.0, 4)].report.metrics() != by_cell[(2.0, 4)].report.metrics()
    assert not by_cell[(0.0, 1)].ok and "batch_size" in by_cell[(0.0, 1)].error
    assert not by_cell[(2.0, 100)].ok and "smaller than batch_size" in by_cell[(2.0, 100)].error


def test_outputs_written(tmp_path):
    rows = sweep.run_sweep(base_config(), {"beta": [0.0, 0.5], "tau": [-1.0]})
    paths = sweep.write_sweep_outputs(tmp_path / "out", rows)

    doc = json.loads(paths["json"].read_text())
    assert [d["status"] for d in doc] == ["failed", "failed"]

    table = list(csv.DictReader(io.StringIO(paths["csv"].read_text())))
    assert list(table[0]) == list(sweep.TABLE_COLUMNS)

    ws = openpyxl.load_workbook(paths["xlsx"]).active
    assert [c.value for c in ws[1]] == list(sweep.TABLE_COLUMNS)
    assert ws.max_row == 3

    summary = paths["summary"].read_text()
    assert summary.startswith("2 cells, 0 succeeded")
    assert summary.count("FAILED") == 2


def test_summary_ranks_by_precision():
    rows = sweep.run_sweep(base_config(), {"alpha": [0.0, 2.0]})
    lines = sweep.summary_text(rows).splitlines()[2:]
    values = [float(line.split()[1]) for line in lines]
    assert values == sorted(values, reverse=True)


def test_backend_by_attention_grid_gives_six_rows(tmp_path):
    grid = {"backend": ["hyperbolic", "euclidean", "cosine"], "attention": ["mpsa", "softmax"]}
    rows = sweep.run_sweep(base_config(), grid, max_workers=3)
    assert all(r.ok for r in rows)
    paths = sweep.write_sweep_outputs(tmp_path, rows)
    table = list(csv.DictReader(io.StringIO(paths["csv"].read_text())))
    assert [(t["backend"], t["attention"]) for t in table] == [
        (b, a) for b in grid["backend"] for a in grid["attention"]]
    for b in grid["backend"]:
        mpsa, softmax = (next(r for r in rows if r.overrides == {"backend": b, "attention": a})
                         for a in grid["attention"])
        assert mpsa.report.p_at_1 == softmax.report.p_at_1
        assert (mpsa.report.token_accuracy, mpsa.report.per_class_f1) != \
            (softmax.report.token_accuracy, softmax.report.per_class_f1)
    assert all(t["token_accuracy"] != "" for t in table)
