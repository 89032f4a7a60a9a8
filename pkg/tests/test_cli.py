from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import src.cli.run as cli_run
from src.cli.config import DEFAULT_N, Command, GridSpec, parse_args
from src.errors import ConfigError
from src.main_cli import main
from src.measures.spectral import save_measure
from src.storage.db import RunLedger
from src.storage.models import RunStatus


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


# -------------------
# config
# -------------------

def test_grid_spec():
    g = GridSpec.parse("1:2:3")
    assert (g.lo, g.hi, g.count) == (1.0, 2.0, 3)
    assert list(g.points()) == [1.0, 1.5, 2.0]
    assert GridSpec.parse(str(g)) == g


@pytest.mark.parametrize("text", ["1:2", "a:2:3", "2:1:3", "1:2:1"])
def test_grid_spec_rejects(text):
    with pytest.raises(ConfigError):
        GridSpec.parse(text)


def test_config_hash():
    cfg = parse_args(["edges", "--preset", "two-atom", "--seed", "3"])
    assert cfg.config_hash() == parse_args(["edges", "--preset", "two-atom", "--seed", "3"]).config_hash()
    # 出力先やスレッド数では変わらない
    assert replace(cfg, out=Path("x.json"), threads=4, debug=True).config_hash() == cfg.config_hash()
    assert replace(cfg, seed=4).config_hash() != cfg.config_hash()


def _spikes_file(tmp_path, **data):
    p = tmp_path / "spikes.json"
    p.write_text(json.dumps(data), encoding="utf-8")
    return p


def test_spikes_json_sets_n(tmp_path):
    s = _spikes_file(tmp_path, d_a=[4.0], d_b=[], n=2000)
    cfg = parse_args(["spiked-predict", "--preset", "two-atom", "--spikes", str(s)])
    assert cfg.resolved_n() == 2000
    assert cfg.spiked_model().n == 2000
    # --n が優先
    cfg = parse_args(["spiked-predict", "--preset", "two-atom", "--spikes", str(s), "--n", "300"])
    assert cfg.spiked_model().n == 300


def test_n_falls_back_to_default(tmp_path):
    s = _spikes_file(tmp_path, d_a=[4.0], d_b=[])
    assert parse_args(["spiked-predict", "--preset", "two-atom", "--spikes", str(s)]).resolved_n() == DEFAULT_N
    assert parse_args(["edges", "--preset", "two-atom"]).resolved_n() == DEFAULT_N


def test_spikes_json_n_is_validated(tmp_path, capsys):
    s = _spikes_file(tmp_path, d_a=[4.0], d_b=[], n=1)
    assert main(["spiked-predict", "--preset", "two-atom", "--spikes", str(s)]) == 1
    assert _stdout_json(capsys)["field"] == "n"


def test_config_hash_reads_file(tmp_path, two_atom, delta1):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_measure(two_atom, a)
    save_measure(two_atom, b)
    cfg = parse_args(["edges", "--muA", str(a), "--muB", str(b)])
    h = cfg.config_hash()
    save_measure(delta1, b)
    assert cfg.config_hash() != h


# -------------------
# exit codes
# -------------------

@pytest.mark.parametrize(
    "argv",
    [
        ["nope"],
        ["density", "--bogus"],
        ["simulate", "--preset", "two-atom"],
        ["spiked-predict", "--preset", "two-atom"],
        ["density"],
        ["density", "--preset", "two-atom", "--grid", "3:1:5"],
        ["edges", "--preset", "two-atom", "--muA", "x.json"],
    ],
)
def test_config_errors_exit_1(capsys, argv):
    assert main(argv) == 1
    assert _stdout_json(capsys)["cause"] == "config_error"


def test_missing_file_exit_1(capsys, tmp_path):
    assert main(["edges", "--muA", str(tmp_path / "a.json"), "--muB", str(tmp_path / "b.json")]) == 1
    assert _stdout_json(capsys)["field"] == "muA"


def test_invalid_measure_exit_2(capsys, tmp_path, two_atom):
    bad, good = tmp_path / "bad.json", tmp_path / "good.json"
    bad.write_text("{not json", encoding="utf-8")
    save_measure(two_atom, good)
    assert main(["edges", "--muA", str(bad), "--muB", str(good)]) == 2
    assert _stdout_json(capsys)["cause"] == "invalid_measure"


# -------------------
# commands
# -------------------

def test_edges_prints_json(capsys):
    assert main(["edges", "--preset", "two-atom"]) == 0
    rec = _stdout_json(capsys)
    assert rec["e_plus"] == pytest.approx(9.0, abs=1e-6)
    assert rec["e_minus"] == pytest.approx(1.0, abs=1e-6)
    assert rec["meta"]["seed"] == 0


def test_density_writes_csv(tmp_path):
    out = tmp_path / "rho.csv"
    assert main(["density", "--preset", "two-atom", "--grid", "2:8:5", "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x,rho,re_m,im_m"
    assert len(lines) == 6
    meta = json.loads((tmp_path / "rho.csv.meta.json").read_text(encoding="utf-8"))
    assert {"config_hash", "version", "e_plus", "points"} <= set(meta)


def test_subordinate_writes_csv(tmp_path):
    out = tmp_path / "omega.csv"
    assert main(["subordinate", "--preset", "two-atom", "--grid", "2:8:4", "--eta", "0.1", "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("x,eta,re_omega_a")
    assert len(lines) == 5
    meta = json.loads((tmp_path / "omega.csv.meta.json").read_text(encoding="utf-8"))
    assert meta["failed_points"] == 0


def test_spiked_predict(capsys):
    assert main(["spiked-predict", "--preset", "spiked", "--n", "200"]) == 0
    rec = _stdout_json(capsys)
    assert set(rec["overlaps"]) == {"A1"}


def test_ledger_rows(tmp_path, capsys):
    db = tmp_path / "runs.sqlite"
    assert main(["edges", "--preset", "two-atom", "--db", str(db)]) == 0
    capsys.readouterr()
    ledger = RunLedger(db)
    run = ledger.latest_run()
    assert run.command == "edges"
    assert run.status == RunStatus.OK
    names = {m.name for m in ledger.metrics_for(1)}
    assert "e_plus" in names


@pytest.mark.parametrize(
    "argv",
    [
        ["verify", "--preset", "two-atom", "--n", "50", "--trials", "2", "--seed", "5", "--grid", "0.5:9.5:300"],
        ["simulate", "--preset", "spiked", "--n", "40", "--trials", "2", "--seed", "5"],
    ],
)
def test_trial_commands_are_byte_reproducible(tmp_path, argv):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}.json"
        assert main(argv + ["--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def _linalg_failure(config):
    raise np.linalg.LinAlgError("SVD did not converge")


def test_unexpected_numeric_error_exit_2(tmp_path, capsys, monkeypatch):
    monkeypatch.setitem(cli_run._COMMANDS, Command.EDGES, _linalg_failure)
    db = tmp_path / "runs.sqlite"
    assert main(["edges", "--preset", "two-atom", "--db", str(db)]) == 2
    rec = _stdout_json(capsys)
    assert rec["cause"] == "numerical_failure"
    assert rec["details"]["error"] == "LinAlgError"
    run = RunLedger(db).latest_run()
    assert run.status == RunStatus.NUMERICAL_ERROR
    assert run.cause == "numerical_failure"
