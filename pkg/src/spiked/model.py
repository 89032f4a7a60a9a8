from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Self

from src.convolution.edges import UpperEdge, find_upper_edge
from src.errors import ConfigError
from src.measures.spectral import SpectralMeasure
from src.subordination.config import DEFAULT_CONFIG, SolverConfig

MAX_SPIKES = 32
MAX_STRENGTH = 1e3


class Side(str, Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True, order=True)
class SpikeLabel:
    """A_i / B_j（1 始まり）。bulk=True は摂動されていない最大の対角成分の代表"""
    side: Side
    index: int
    bulk: bool = False

    def __str__(self) -> str:
        return f"{self.side.value}{'*' if self.bulk else self.index}"


@dataclass(frozen=True, eq=False)
class SpikedModel:
    """
    Â = diag(a_1(1+d^a_1), ..., a_r(1+d^a_r), a_{r+1}, ...)、B̂ も同様。
    a_k は μ_A の n 次元対角（降順）から取る。バルクの計算には μ_A, μ_B をそのまま使う。
    """
    muA: SpectralMeasure
    muB: SpectralMeasure
    d_a: Tuple[float, ...] = ()
    d_b: Tuple[float, ...] = ()
    n: int = 1000
    cfg: SolverConfig = field(default=DEFAULT_CONFIG, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "d_a", tuple(float(d) for d in self.d_a))
        object.__setattr__(self, "d_b", tuple(float(d) for d in self.d_b))
        object.__setattr__(self, "n", int(self.n))
        if self.n < 2:
            raise ConfigError("n は 2 以上", field="n")
        for name, ds in (("d_a", self.d_a), ("d_b", self.d_b)):
            if len(ds) > MAX_SPIKES:
                raise ConfigError(f"{name} のスパイクは {MAX_SPIKES} 個まで", field=name)
            if len(ds) >= self.n:
                raise ConfigError(f"{name} のスパイク数が n 以上です", field=name)
            if any(not np.isfinite(d) or d < 0.0 or d > MAX_STRENGTH for d in ds):
                raise ConfigError(f"{name} の強さは [0, {MAX_STRENGTH:g}]", field=name)

    # -------------------
    # diagonals
    # -------------------

    @property
    def r(self) -> int:
        return len(self.d_a)

    @property
    def s(self) -> int:
        return len(self.d_b)

    @cached_property
    def a_diag(self) -> np.ndarray:
        return self.muA.quantile_values(self.n)

    @cached_property
    def b_diag(self) -> np.ndarray:
        return self.muB.quantile_values(self.n)

    @cached_property
    def a_hat(self) -> np.ndarray:
        return self.a_diag[: self.r] * (1.0 + np.array(self.d_a))

    @cached_property
    def b_hat(self) -> np.ndarray:
        return self.b_diag[: self.s] * (1.0 + np.array(self.d_b))

    def spiked_diagonals(self) -> Tuple[np.ndarray, np.ndarray]:
        """摂動後の対角（降順に並べ直す前の、スパイクが先頭にある並び）"""
        a = self.a_diag.copy()
        b = self.b_diag.copy()
        a[: self.r] = self.a_hat
        b[: self.s] = self.b_hat
        return a, b

    def labels(self) -> List[SpikeLabel]:
        return [SpikeLabel(Side.A, i + 1) for i in range(self.r)] + [SpikeLabel(Side.B, j + 1) for j in range(self.s)]

    def bulk_labels(self) -> List[SpikeLabel]:
        return [SpikeLabel(Side.A, self.r + 1, bulk=True), SpikeLabel(Side.B, self.s + 1, bulk=True)]

    def hat(self, label: SpikeLabel) -> float:
        if label.side == Side.A:
            return float(self.a_diag[self.r] if label.bulk else self.a_hat[label.index - 1])
        return float(self.b_diag[self.s] if label.bulk else self.b_hat[label.index - 1])

    # -------------------
    # edge / thresholds
    # -------------------

    @cached_property
    def edge(self) -> UpperEdge:
        return find_upper_edge(self.muA, self.muB, self.cfg)

    @property
    def e_plus(self) -> float:
        return self.edge.e_plus

    def threshold(self, side: Side) -> float:
        """A 側は Ω_B(E₊)、B 側は Ω_A(E₊)"""
        return self.edge.omega_b_at_edge if side == Side.A else self.edge.omega_a_at_edge

    def gap(self, label: SpikeLabel) -> float:
        # â_i − Ω_B(E₊) / b̂_j − Ω_A(E₊)
        return self.hat(label) - self.threshold(label.side)

    def with_strengths(self, d_a: Sequence[float] = (), d_b: Sequence[float] = ()) -> Self:
        """同じ底の測度でスパイクだけ差し替える（端の計算は引き継ぐ）"""
        other = replace(self, d_a=tuple(d_a), d_b=tuple(d_b))
        for key in ("edge", "a_diag", "b_diag"):
            if key in self.__dict__:
                other.__dict__[key] = self.__dict__[key]
        return other

    # -------------------
    # JSON
    # -------------------

    def spikes_json(self) -> Dict[str, Any]:
        return {"d_a": list(self.d_a), "d_b": list(self.d_b), "n": self.n}

    @classmethod
    def from_json(
        cls,
        data: Union[str, Path, Dict[str, Any]],
        muA: SpectralMeasure,
        muB: SpectralMeasure,
        cfg: SolverConfig = DEFAULT_CONFIG,
        n: Optional[int] = None,
    ) -> Self:
        """{"d_a":[...], "d_b":[...], "n":N}（n は引数で上書きできる）"""
        if not isinstance(data, dict):
            try:
                data = json.loads(Path(data).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"スパイク指定を読めません: {e}", field="spikes") from e
        try:
            d_a = [float(x) for x in data.get("d_a", [])]
            d_b = [float(x) for x in data.get("d_b", [])]
            size = int(n if n is not None else data.get("n", 1000))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"スパイク指定の形式が不正です: {e}", field="spikes") from e
        return cls(muA=muA, muB=muB, d_a=tuple(d_a), d_b=tuple(d_b), n=size, cfg=cfg)
