from __future__ import annotations

import math
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from src.storage.models import MetricRow, RunRecord, RunStatus


class RunLedger:
    """CLI の実行履歴。runs に 1 行、その数値指標を run_metrics に入れる"""

    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

    def connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(str(self.db_path))
        conn.row_factory = sqlite3.Row
        return conn

    def init_db(self) -> None:
        with self.connect() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    ts TEXT NOT NULL,
                    command TEXT NOT NULL,
                    config_hash TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    status TEXT NOT NULL,
                    version TEXT NOT NULL,
                    output TEXT,
                    cause TEXT
                )
            """)
            conn.execute("""
                CREATE TABLE IF NOT EXISTS run_metrics (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL REFERENCES runs(id),
                    name TEXT NOT NULL,
                    value REAL
                )
            """)
            conn.commit()

    def insert_run(self, run: RunRecord) -> int:
        with self.connect() as conn:
            cur = conn.execute("""
                INSERT INTO runs (ts, command, config_hash, seed, status, version, output, cause)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            """, (
                run.ts.isoformat(timespec="seconds"),
                run.command,
                run.config_hash,
                int(run.seed),
                run.status.value,
                run.version,
                run.output,
                run.cause,
            ))
            conn.commit()
            return int(cur.lastrowid)

    def insert_metrics(self, run_id: int, metrics: Mapping[str, float]) -> int:
        # NaN / inf は NULL で入れる
        rows = [
            (int(run_id), str(k), float(v) if math.isfinite(float(v)) else None)
            for k, v in sorted(metrics.items())
        ]
        with self.connect() as conn:
            conn.executemany("INSERT INTO run_metrics (run_id, name, value) VALUES (?, ?, ?)", rows)
            conn.commit()
        return len(rows)

    def latest_run(self, command: Optional[str] = None) -> Optional[RunRecord]:
        with self.connect() as conn:
            if command is None:
                row = conn.execute("SELECT * FROM runs ORDER BY id DESC LIMIT 1").fetchone()
            else:
                row = conn.execute(
                    "SELECT * FROM runs WHERE command = ? ORDER BY id DESC LIMIT 1", (command,)
                ).fetchone()
            if row is None:
                return None
            return RunRecord(
                ts=datetime.fromisoformat(row["ts"]),
                command=row["command"],
                config_hash=row["config_hash"],
                seed=int(row["seed"]),
                status=RunStatus(row["status"]),
                version=row["version"],
                output=row["output"],
                cause=row["cause"],
            )

    def metrics_for(self, run_id: int) -> List[MetricRow]:
        with self.connect() as conn:
            rows = conn.execute(
                "SELECT run_id, name, value FROM run_metrics WHERE run_id = ? ORDER BY name", (int(run_id),)
            ).fetchall()
        return [
            MetricRow(run_id=int(r["run_id"]), name=r["name"], value=math.nan if r["value"] is None else float(r["value"]))
            for r in rows
        ]

    def runs_with_hash(self, config_hash: str) -> Dict[int, RunStatus]:
        with self.connect() as conn:
            rows = conn.execute("SELECT id, status FROM runs WHERE config_hash = ? ORDER BY id", (config_hash,)).fetchall()
        return {int(r["id"]): RunStatus(r["status"]) for r in rows}
