from __future__ import annotations

import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from src.cli.config import Command, RunConfig
from src.convolution.density import DEFAULT_EVAL_ETA, default_grid, density, write_density_csv
from src.convolution.edges import find_lower_edge, find_upper_edge
from src.errors import ConfigError, FreeConvError
from src.rmt_lab.estimators import calibrate_threshold
from src.rmt_lab.experiment import outlier_experiment, simulate, verify
from src.spiked.overlaps import prediction_report
from src.storage.db import RunLedger
from src.storage.export import dumps, sidecar_path, write_csv, write_json
from src.storage.models import RunRecord, RunStatus
from src.subordination.solver import solve_grid
from src.util.debuglog import configure, get_logger
from src.version import __version__

logger = get_logger(__name__)

SUBORDINATE_HEADER = ("x", "eta", "re_omega_a", "im_omega_a", "re_omega_b", "im_omega_b", "residual", "iterations", "status")

# (JSON に載せる本体, run_metrics に入れるスカラー, 書いたファイル)
Outcome = Tuple[Dict[str, Any], Dict[str, float], Optional[Path]]


def _meta(config: RunConfig) -> Dict[str, Any]:
    return {"config_hash": config.config_hash(), "version": __version__, "seed": config.seed}


def _emit(config: RunConfig, payload: Dict[str, Any]) -> Optional[Path]:
    """--out があれば JSON を書き、なければ標準出力へ"""
    body = dict(payload)
    body["meta"] = _meta(config)
    if config.out is not None:
        return write_json(config.out, body)
    sys.stdout.write(dumps(body))
    return None


def _flatten(obj: Dict[str, Any], prefix: str = "") -> Dict[str, float]:
    # ネストした dict からスカラーの数値だけを取り出す
    out: Dict[str, float] = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, (bool, int, float)):
            out[key] = float(v)
        elif isinstance(v, dict):
            out.update(_flatten(v, key + "."))
    return out


# -------------------
# commands
# -------------------

def _density(config: RunConfig) -> Outcome:
    muA, muB = config.measures()
    cfg = config.solver_config()
    grid = config.grid.points() if config.grid is not None else default_grid(muA, muB)
    eta = DEFAULT_EVAL_ETA if config.eta is None else config.eta
    result = density(muA, muB, grid=grid, eval_eta=eta, cfg=cfg)
    meta = result.metadata()
    if config.out is not None:
        out = write_density_csv(result, config.out, _meta(config))
    else:
        out = _emit(config, {"command": config.command.value, **meta})
    return meta, {k: float(v) for k, v in meta.items()}, out


def _edges(config: RunConfig) -> Outcome:
    muA, muB = config.measures()
    cfg = config.solver_config()
    up = find_upper_edge(muA, muB, cfg)
    low = find_lower_edge(muA, muB, cfg)
    payload = {
        "e_plus": up.e_plus,
        "e_minus": low.e_minus,
        "omega_a_at_upper_edge": up.omega_a_at_edge,
        "omega_b_at_upper_edge": up.omega_b_at_edge,
        "omega_a_at_lower_edge": low.omega_a_at_edge,
        "omega_b_at_lower_edge": low.omega_b_at_edge,
    }
    return payload, dict(payload), _emit(config, payload)


def _subordinate(config: RunConfig) -> Outcome:
    muA, muB = config.measures()
    cfg = config.solver_config()
    xs = config.grid.points() if config.grid is not None else default_grid(muA, muB, 200)
    eta = DEFAULT_EVAL_ETA if config.eta is None else config.eta
    sol = solve_grid(muA, muB, xs, eta, cfg)
    failed = int(np.sum(~sol.ok()))
    summary = {
        "points": int(len(xs)),
        "failed_points": failed,
        "eta": float(eta),
        "max_residual": float(np.nanmax(sol.residual)) if len(xs) else 0.0,
    }
    rows = zip(
        sol.z.real, sol.z.imag,
        sol.omega_a.real, sol.omega_a.imag,
        sol.omega_b.real, sol.omega_b.imag,
        sol.residual, sol.iterations.astype(int), sol.status.astype(int),
    )
    if config.out is not None:
        out = write_csv(config.out, SUBORDINATE_HEADER, rows)
        write_json(sidecar_path(out), {**summary, **_meta(config)})
    else:
        out = _emit(config, {
            **summary,
            "rows": [list(r) for r in rows],
            "header": list(SUBORDINATE_HEADER),
        })
    return summary, {k: float(v) for k, v in summary.items()}, out


def _spiked_predict(config: RunConfig) -> Outcome:
    model = config.spiked_model()
    report = prediction_report(model)
    metrics = {"e_plus": report["e_plus"], "supercritical": float(len(report["overlaps"]))}
    return report, metrics, _emit(config, report)


def _simulate(config: RunConfig) -> Outcome:
    muA, muB = config.measures()
    model = config.spiked_model()
    rep = simulate(
        muA, muB, config.resolved_n(), config.trials, config.seed, config.ensemble, config.threads,
        model=model, exclude=model.r + model.s if model is not None else 0, cfg=config.solver_config(),
    )
    rec = rep.to_record()
    metrics = {
        "lambda_1_mean": float(np.mean([row[0] for row in rep.eigenvalue_rows])),
        "deloc_median": float(np.median(rep.deloc_max)),
    }
    return rec, metrics, _emit(config, rec)


def _verify(config: RunConfig) -> Outcome:
    muA, muB = config.measures()
    grid = config.grid.points() if config.grid is not None else None
    rep = verify(
        muA, muB, config.resolved_n(), config.trials, config.seed, config.ensemble, config.threads,
        grid=grid, cfg=config.solver_config(),
    )
    rec = rep.to_record()
    metrics = _flatten({"metrics": rep.metrics, "passed": rep.passed()})
    return rec, metrics, _emit(config, rec)


def _estimate(config: RunConfig) -> Outcome:
    model = config.spiked_model()
    omega = config.omega
    if omega is None:
        omega = calibrate_threshold(
            model.a_diag, model.b_diag, config.trials, config.seed + 1, config.ensemble, threads=config.threads
        )
    rep = outlier_experiment(model, config.trials, config.seed, config.ensemble, config.threads, omega=omega)
    rec = rep.to_record()
    rec["omega"] = omega
    rec["count_success"] = rep.count_success(model.r, model.s)
    metrics = _flatten({
        "median_estimate_error": rep.median_estimate_error(),
        "count_success": rec["count_success"],
        "omega": omega,
    })
    return rec, metrics, _emit(config, rec)


_COMMANDS: Dict[Command, Callable[[RunConfig], Outcome]] = {
    Command.DENSITY: _density,
    Command.EDGES: _edges,
    Command.SUBORDINATE: _subordinate,
    Command.SPIKED_PREDICT: _spiked_predict,
    Command.SIMULATE: _simulate,
    Command.VERIFY: _verify,
    Command.ESTIMATE: _estimate,
}


# -------------------
# run
# -------------------

def error_record(e: Exception) -> Dict[str, Any]:
    if isinstance(e, FreeConvError):
        return e.to_record()
    rec: Dict[str, Any] = {"status": "error", "cause": "config_error", "message": str(e)}
    field = getattr(e, "field", None)
    if field:
        rec["field"] = field
    return rec


def _record_run(config: RunConfig, status: RunStatus, out: Optional[Path], cause: Optional[str], metrics: Dict[str, float]) -> None:
    if config.db is None:
        return
    try:
        ledger = RunLedger(config.db)
        ledger.init_db()
        run_id = ledger.insert_run(RunRecord(
            ts=datetime.now(),
            command=config.command.value,
            config_hash=config.config_hash(),
            seed=config.seed,
            status=status,
            version=__version__,
            output=str(out) if out is not None else None,
            cause=cause,
        ))
        ledger.insert_metrics(run_id, metrics)
    except Exception as e:
        # 履歴が書けなくても結果は返す
        logger.warning("run ledger not written: %s", e)


def _fail(config: RunConfig, e: Exception) -> int:
    status = RunStatus.NUMERICAL_ERROR if isinstance(e, FreeConvError) else RunStatus.CONFIG_ERROR
    rec = error_record(e)
    sys.stdout.write(dumps(rec))
    logger.error("%s failed: %s", config.command.value, e)
    _record_run(config, status, None, rec["cause"], {})
    return status.exit_code


def run(config: RunConfig) -> int:
    """
    exit 0: 成功（宣言したファイルを書いた）
    exit 1: 設定ミス
    exit 2: 数値計算の失敗（標準出力に JSON のエラーレコード）
    """
    configure(config.debug)
    try:
        config.validate()
        payload, metrics, out = _COMMANDS[config.command](config)
    except (ConfigError, FreeConvError) as e:
        return _fail(config, e)
    except (np.linalg.LinAlgError, ArithmeticError, ValueError) as e:
        # 数値コードから漏れた例外も exit 2 の JSON レコードにする
        logger.debug("unexpected %s", type(e).__name__, exc_info=True)
        return _fail(config, FreeConvError(f"数値計算が失敗しました: {e}", error=type(e).__name__))

    if out is not None:
        logger.info("%s: wrote %s", config.command.value, out)
    _record_run(config, RunStatus.OK, out, None, metrics)
    return RunStatus.OK.exit_code
