from __future__ import annotations

import json
import math
from datetime import datetime

import numpy as np
import pytest

from src.storage.db import RunLedger
from src.storage.export import dumps, fmt_float, plain, sidecar_path, write_csv
from src.storage.models import RunRecord, RunStatus


def _record(**kw) -> RunRecord:
    base = dict(
        ts=datetime(2024, 1, 2, 3, 4, 5),
        command="edges",
        config_hash="abc",
        seed=3,
        status=RunStatus.OK,
        version="0.3.0",
        output=None,
        cause=None,
    )
    base.update(kw)
    return RunRecord(**base)


@pytest.fixture
def ledger(tmp_path):
    led = RunLedger(tmp_path / "db" / "runs.sqlite")
    led.init_db()
    return led


# -------------------
# RunLedger
# -------------------

def test_insert_and_latest(ledger):
    ledger.init_db()
    first = ledger.insert_run(_record())
    second = ledger.insert_run(_record(command="density", status=RunStatus.NUMERICAL_ERROR, cause="no_convergence"))
    assert second == first + 1
    assert ledger.latest_run() == _record(command="density", status=RunStatus.NUMERICAL_ERROR, cause="no_convergence")
    assert ledger.latest_run("edges") == _record()
    assert ledger.latest_run("verify") is None


def test_metrics_keep_nan_as_null(ledger):
    run_id = ledger.insert_run(_record())
    assert ledger.insert_metrics(run_id, {"b": math.nan, "a": 1.5, "c": math.inf}) == 3
    rows = ledger.metrics_for(run_id)
    assert [r.name for r in rows] == ["a", "b", "c"]
    assert rows[0].value == 1.5
    assert math.isnan(rows[1].value) and math.isnan(rows[2].value)


def test_runs_with_hash(ledger):
    a = ledger.insert_run(_record())
    b = ledger.insert_run(_record(status=RunStatus.CONFIG_ERROR))
    ledger.insert_run(_record(config_hash="other"))
    assert ledger.runs_with_hash("abc") == {a: RunStatus.OK, b: RunStatus.CONFIG_ERROR}


@pytest.mark.parametrize("status,code", [(RunStatus.OK, 0), (RunStatus.CONFIG_ERROR, 1), (RunStatus.NUMERICAL_ERROR, 2)])
def test_exit_codes(status, code):
    assert status.exit_code == code


# -------------------
# export
# -------------------

def test_fmt_float():
    assert fmt_float(0.1) == "0.10000000000000001"
    assert fmt_float(math.nan) == "nan"
    assert fmt_float(-math.inf) == "-inf"
    assert float(fmt_float(1 / 3)) == 1 / 3


def test_plain():
    obj = {
        1: np.float64(2.5),
        "z": 1 + 2j,
        "arr": np.array([1, 2]),
        "bad": math.nan,
        "flag": np.bool_(True),
        "status": RunStatus.OK,
        "t": (np.int64(3),),
    }
    assert plain(obj) == {
        "1": 2.5,
        "z": [1.0, 2.0],
        "arr": [1, 2],
        "bad": "nan",
        "flag": True,
        "status": "OK",
        "t": [3],
    }
    text = dumps({"b": 1, "a": [math.inf]})
    assert text.endswith("\n")
    assert json.loads(text) == {"a": ["inf"], "b": 1}


def test_csv_and_sidecar_path(tmp_path):
    out = write_csv(tmp_path / "sub" / "t.csv", ("x", "k"), [(0.5, 1), (np.float64(0.25), 2)])
    assert out.read_text(encoding="utf-8") == "x,k\n0.5,1\n0.25,2\n"
    assert sidecar_path(out).name == "t.csv.meta.json"
