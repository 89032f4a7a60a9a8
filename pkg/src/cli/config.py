from __future__ import annotations

import argparse
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from typing_extensions import Self

from src.cli.presets import PRESETS, get_preset
from src.errors import ConfigError
from src.measures.spectral import SpectralMeasure, load_measure
from src.rmt_lab.haar import Ensemble
from src.spiked.model import SpikedModel
from src.subordination.config import DEFAULT_CONFIG, SolverConfig


class Command(str, Enum):
    DENSITY = "density"
    EDGES = "edges"
    SUBORDINATE = "subordinate"
    SPIKED_PREDICT = "spiked-predict"
    SIMULATE = "simulate"
    VERIFY = "verify"
    ESTIMATE = "estimate"


NEEDS_TRIALS = (Command.SIMULATE, Command.VERIFY, Command.ESTIMATE)
NEEDS_SPIKES = (Command.SPIKED_PREDICT, Command.ESTIMATE)

# ハッシュに入れない（結果を変えない）項目
_HASH_EXCLUDE = ("out", "debug", "db", "threads")

DEFAULT_N = 1000


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    count: int

    @classmethod
    def parse(cls, text: str) -> Self:
        """'lo:hi:count'"""
        parts = str(text).split(":")
        if len(parts) != 3:
            raise ConfigError(f"--grid は lo:hi:count の形式です: {text!r}", field="grid")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as e:
            raise ConfigError(f"--grid を読めません: {text!r}", field="grid") from e
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigError("--grid は lo < hi", field="grid")
        if count < 2:
            raise ConfigError("--grid の count は 2 以上", field="grid")
        return cls(lo=lo, hi=hi, count=count)

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)

    def __str__(self) -> str:
        return f"{self.lo!r}:{self.hi!r}:{self.count}"


@dataclass(frozen=True)
class RunConfig:
    command: Command
    muA: Optional[Path] = None
    muB: Optional[Path] = None
    preset: Optional[str] = None
    grid: Optional[GridSpec] = None
    eta: Optional[float] = None
    n: Optional[int] = None
    trials: Optional[int] = None
    seed: int = 0
    spikes: Optional[Path] = None
    out: Optional[Path] = None
    tol: Optional[float] = None
    threads: int = 0
    ensemble: Ensemble = Ensemble.UNITARY
    omega: Optional[float] = None
    debug: bool = False
    db: Optional[Path] = None

    def validate(self) -> Self:
        if self.preset is not None:
            get_preset(self.preset)
            if self.muA is not None or self.muB is not None:
                raise ConfigError("--preset と --muA/--muB は同時に指定できません", field="preset")
        elif self.muA is None or self.muB is None:
            raise ConfigError("--muA と --muB（または --preset）が必要です", field="muA")
        for name in ("muA", "muB", "spikes"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"--{name} のファイルがありません: {p}", field=name)
        if self.command in NEEDS_TRIALS and (self.trials is None or self.trials < 1):
            raise ConfigError(f"{self.command.value} には --trials（1 以上）が必要です", field="trials")
        if self.command in NEEDS_SPIKES and self.spikes is None and not (self.preset and get_preset(self.preset).spiked):
            raise ConfigError(f"{self.command.value} には --spikes かスパイク入りの preset が必要です", field="spikes")
        if self.resolved_n() < 2:
            raise ConfigError("--n は 2 以上", field="n")
        if self.eta is not None and not (self.eta >= 0.0):
            raise ConfigError("--eta は非負", field="eta")
        if self.tol is not None and not (self.tol > 0.0):
            raise ConfigError("--tol は正", field="tol")
        if self.omega is not None and not (0.0 < self.omega <= 1.0):
            raise ConfigError("--omega は (0, 1]", field="omega")
        if self.threads < 0:
            raise ConfigError("--threads は 0 以上（0 = 自動）", field="threads")
        return self

    # -------------------
    # 組み立て
    # -------------------

    def resolved_n(self) -> int:
        """--n > スパイク JSON の "n" > DEFAULT_N"""
        if self.n is not None:
            return int(self.n)
        if self.spikes is not None:
            try:
                data = json.loads(Path(self.spikes).read_text(encoding="utf-8"))
                size = data.get("n") if isinstance(data, dict) else None
                if size is not None:
                    return int(size)
            except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
                raise ConfigError(f"スパイク指定の n を読めません: {e}", field="spikes") from e
        return DEFAULT_N

    def solver_config(self) -> SolverConfig:
        cfg = replace(DEFAULT_CONFIG, threads=self.threads)
        return replace(cfg, tol=self.tol) if self.tol is not None else cfg

    def measures(self) -> Tuple[SpectralMeasure, SpectralMeasure]:
        if self.preset is not None:
            return get_preset(self.preset).measures()
        return load_measure(self.muA), load_measure(self.muB)

    def spiked_model(self) -> Optional[SpikedModel]:
        cfg = self.solver_config()
        if self.spikes is not None:
            muA, muB = self.measures()
            return SpikedModel.from_json(self.spikes, muA, muB, cfg, n=self.resolved_n())
        if self.preset is not None:
            return get_preset(self.preset).model(self.resolved_n(), cfg)
        return None

    def to_record(self) -> Dict[str, Any]:
        rec = asdict(self)
        rec["command"] = self.command.value
        rec["ensemble"] = self.ensemble.value
        rec["grid"] = str(self.grid) if self.grid is not None else None
        for key in ("muA", "muB", "spikes", "out", "db"):
            rec[key] = str(rec[key]) if rec[key] is not None else None
        return rec

    def config_hash(self) -> str:
        """入力ファイルの中身も含めた正規化 JSON の SHA-256"""
        rec = {k: v for k, v in self.to_record().items() if k not in _HASH_EXCLUDE}
        for key in ("muA", "muB", "spikes"):
            p = getattr(self, key)
            if p is not None:
                rec[key] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
        text = json.dumps(rec, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


# -------------------
# argparse
# -------------------

class _Parser(argparse.ArgumentParser):
    # argparse の既定（exit 2）ではなく ConfigError にする
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="freeconv", description="自由乗法畳み込み・スパイク模型・モンテカルロ検証")
    p.add_argument("command", choices=[c.value for c in Command])
    p.add_argument("--muA", type=Path)
    p.add_argument("--muB", type=Path)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--grid", type=str, help="lo:hi:count")
    p.add_argument("--eta", type=float)
    p.add_argument("--n", type=int, help=f"行列サイズ（既定: スパイク JSON の n、なければ {DEFAULT_N}）")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spikes", type=Path, help='{"d_a":[...],"d_b":[...],"n":N}')
    p.add_argument("--out", type=Path)
    p.add_argument("--tol", type=float)
    p.add_argument("--threads", type=int, default=0, help="0 = 自動")
    p.add_argument("--ensemble", choices=[e.value for e in Ensemble], default=Ensemble.UNITARY.value)
    p.add_argument("--omega", type=float, help="estimate のスパイク数推定の閾値")
    p.add_argument("--debug", action="store_true")
    p.add_argument("--db", type=Path, help="実行履歴の sqlite ファイル")
    return p


def parse_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    ns = build_parser().parse_args(list(argv) if argv is not None else None)
    return RunConfig(
        command=Command(ns.command),
        muA=ns.muA,
        muB=ns.muB,
        preset=ns.preset,
        grid=GridSpec.parse(ns.grid) if ns.grid is not None else None,
        eta=ns.eta,
        n=ns.n,
        trials=ns.trials,
        seed=ns.seed,
        spikes=ns.spikes,
        out=ns.out,
        tol=ns.tol,
        threads=ns.threads,
        ensemble=Ensemble(ns.ensemble),
        omega=ns.omega,
        debug=ns.debug,
        db=ns.db,
    ).validate()
