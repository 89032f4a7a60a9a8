from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from src.errors import SubcriticalInS
from src.spiked.model import Side, SpikedModel, SpikeLabel
from src.spiked.predict import Classification, classify, inverse_side, omega_inverse_prime, predict_outliers
from src.util.debuglog import get_logger
from src.version import __version__

logger = get_logger(__name__)

TAU1_DEFAULT = 1.0 / 3.0
TAU2_DEFAULT = 1.0 / 2.0

LabelLike = Union[SpikeLabel, int]


@dataclass(frozen=True, eq=False)
class DeltaTable:
    """
    pairs[(row, col)]: row は O のラベル、col は全スパイク + バルク代表
      A 行: A 列 |â_i1 − â_i2|、B 列 |b̂_j − Ω_A(Ω_B^{-1}(â_i1))|
      B 行: A 列 |â_i − Ω_B(Ω_A^{-1}(b̂_j1))|、B 列 |b̂_j1 − b̂_j2|
    per_label[𝔞]: δ_𝔞(S)
    """
    pairs: Dict[Tuple[SpikeLabel, SpikeLabel], float]
    per_label: Dict[SpikeLabel, float]

    def get(self, row: SpikeLabel, col: SpikeLabel) -> float:
        return self.pairs[(row, col)]

    def to_record(self) -> Dict[str, Any]:
        return {
            "pairs": {f"{r},{c}": v for (r, c), v in sorted(self.pairs.items())},
            "per_label": {str(k): v for k, v in sorted(self.per_label.items())},
        }


def _resolve(S: Iterable[LabelLike], cls: Classification) -> Tuple[SpikeLabel, ...]:
    out: List[SpikeLabel] = []
    for item in S:
        lab = cls.label_at(item) if isinstance(item, int) else item
        if lab not in out:
            out.append(lab)
    return tuple(sorted(out))


def nonoverlap_deltas(
    model: SpikedModel,
    S: Iterable[LabelLike],
    classification: Optional[Classification] = None,
) -> DeltaTable:
    cls = classification if classification is not None else classify(model)
    chosen = set(_resolve(S, cls))
    columns = model.labels() + model.bulk_labels()

    pairs: Dict[Tuple[SpikeLabel, SpikeLabel], float] = {}
    for row in cls.outliers:
        sol = cls.solutions[row]
        # A 行は Ω_A(Ω_B^{-1}(â))、B 行は Ω_B(Ω_A^{-1}(b̂)) を使う
        cross = float((sol.omega_a if row.side == Side.A else sol.omega_b).real)
        here = model.hat(row)
        for col in columns:
            if col == row:
                continue
            other = model.hat(col)
            pairs[(row, col)] = abs(here - other) if col.side == row.side else abs(other - cross)

    def _min(vals: Iterable[float]) -> float:
        return min(vals, default=math.inf)

    per_label: Dict[SpikeLabel, float] = {}
    for lab in columns:
        if lab in chosen:
            per_label[lab] = _min(v for (r, c), v in pairs.items() if r == lab and c not in chosen)
        else:
            per_label[lab] = _min(v for (r, c), v in pairs.items() if r in chosen and c == lab)
    return DeltaTable(pairs=pairs, per_label=per_label)


def overlap_envelope(n: int, gap: float, delta: float, multiplier: float = 1.0) -> float:
    """multiplier · (n^{-1/2} Δ^{-1/2} + n^{-1} δ^{-2})"""
    if gap <= 0.0:
        return math.inf
    term2 = math.inf if delta <= 0.0 else 1.0 / (n * delta * delta)
    return multiplier * (1.0 / math.sqrt(n * gap) + term2)


@dataclass(frozen=True, eq=False)
class OverlapPrediction:
    set_s: Tuple[SpikeLabel, ...]
    g_a_diag: Dict[int, float]
    g_b_diag: Dict[int, float]
    delta_table: DeltaTable
    assumption_ok: bool
    envelope: Dict[SpikeLabel, float]

    def g(self, label: SpikeLabel) -> float:
        return (self.g_a_diag if label.side == Side.A else self.g_b_diag)[label.index]

    def to_record(self) -> Dict[str, Any]:
        return {
            "set_s": [str(x) for x in self.set_s],
            "g_a": {str(k): v for k, v in sorted(self.g_a_diag.items())},
            "g_b": {str(k): v for k, v in sorted(self.g_b_diag.items())},
            "assumption_ok": self.assumption_ok,
            "envelope": {str(k): v for k, v in sorted(self.envelope.items())},
            "delta": self.delta_table.to_record(),
        }


def predict_overlaps(
    model: SpikedModel,
    S: Iterable[LabelLike],
    tau1: float = TAU1_DEFAULT,
    tau2: float = TAU2_DEFAULT,
    multiplier: float = 1.0,
    classification: Optional[Classification] = None,
) -> OverlapPrediction:
    """
    g_a(i) = â_i (Ω_B^{-1})′(â_i) / Ω_B^{-1}(â_i)（B 側は入れ替え）。
    assumption_ok: S の各ラベルで Δ >= n^{-1/3+τ1} かつ δ(S) >= n^{-1/2+τ2} Δ^{-1/2}
    """
    cls = classification if classification is not None else classify(model)
    chosen = _resolve(S, cls)
    bad = [lab for lab in chosen if lab not in cls.supercritical]
    if bad:
        raise SubcriticalInS(
            f"S に O⁺ 以外のラベルがあります: {[str(b) for b in bad]}",
            labels=",".join(str(b) for b in bad),
        )

    table = nonoverlap_deltas(model, chosen, cls)
    n = model.n
    g_a: Dict[int, float] = {}
    g_b: Dict[int, float] = {}
    envelope: Dict[SpikeLabel, float] = {}
    ok = True
    for lab in chosen:
        sol = cls.solutions[lab]
        x = float(sol.z.real)
        hat = model.hat(lab)
        g = hat * omega_inverse_prime(inverse_side(lab), model, sol) / x
        (g_a if lab.side == Side.A else g_b)[lab.index] = g

        gap = model.gap(lab)
        delta = table.per_label[lab]
        envelope[lab] = overlap_envelope(n, gap, delta, multiplier)
        if gap < n ** (-1.0 / 3.0 + tau1):
            ok = False
        if not (delta > 0.0 and delta >= n ** (-0.5 + tau2) * gap ** -0.5):
            ok = False

    if not ok:
        logger.info("overlap assumption not satisfied for S=%s", [str(x) for x in chosen])
    return OverlapPrediction(
        set_s=chosen,
        g_a_diag=g_a,
        g_b_diag=g_b,
        delta_table=table,
        assumption_ok=ok,
        envelope=envelope,
    )


def prediction_report(
    model: SpikedModel,
    tau1: float = TAU1_DEFAULT,
    tau2: float = TAU2_DEFAULT,
    multiplier: float = 1.0,
) -> Dict[str, Any]:
    """スパイクごとの位置・ゆらぎと、O⁺ の各ラベルを単独の S とした重なり予測"""
    cls = classify(model)
    outliers = predict_outliers(model, cls)
    overlaps = {
        str(lab): predict_overlaps(model, [lab], tau1, tau2, multiplier, cls).to_record()
        for lab in cls.supercritical
    }
    return {
        "version": __version__,
        "spikes": model.spikes_json(),
        "e_plus": model.e_plus,
        "omega_a_at_edge": model.edge.omega_a_at_edge,
        "omega_b_at_edge": model.edge.omega_b_at_edge,
        "outliers": [p.to_record() for p in outliers],
        "overlaps": overlaps,
        "tau1": tau1,
        "tau2": tau2,
    }
