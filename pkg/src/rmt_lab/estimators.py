from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.errors import ConfigError, OutlierInsideBulk
from src.rmt_lab.haar import Ensemble
from src.rmt_lab.instance import ModelInstance, build_and_decompose
from src.util.debuglog import get_logger

logger = get_logger(__name__)

INSIDE_BULK_TOL = 1e-9
# λ̂ − E₊ がこれ（n^{-1/2}）未満の推定値は信頼できないとして印をつける
RELIABLE_EXPONENT = -0.5


@dataclass(frozen=True, eq=False)
class SpikeEstimates:
    a_hat: np.ndarray
    b_hat: np.ndarray
    a_reliable: np.ndarray
    b_reliable: np.ndarray

    def to_record(self) -> Dict[str, Any]:
        return {
            "a_hat": [float(x) for x in self.a_hat],
            "b_hat": [float(x) for x in self.b_hat],
            "a_reliable": [bool(x) for x in self.a_reliable],
            "b_reliable": [bool(x) for x in self.b_reliable],
        }


def bulk_resolvent_diag(eigenvalues: np.ndarray, vectors: np.ndarray, x: float, skip: int) -> np.ndarray:
    """上位 skip 個の固有対を除いた G̃_ii(x) = Σ_{m>skip} |q_m(i)|² / (λ_m − x)"""
    Q = vectors[:, skip:]
    return (np.abs(Q) ** 2) @ (1.0 / (eigenvalues[skip:] - x))


def estimate_from_diagonal(lam: float, g_diag: np.ndarray, diag: np.ndarray, skip: int) -> float:
    """tr A − (1/N) Σ_{i>skip} a_i / (λ̂ G̃_ii(λ̂) + 1)（tr は正規化トレース）"""
    n = len(diag)
    tail = diag[skip:] / (lam * g_diag[skip:] + 1.0)
    return float(np.mean(diag) - np.sum(tail.real) / n)


def estimate_spikes(
    eigenvalues: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    a_diag: np.ndarray,
    b_diag: np.ndarray,
    a_ranks: Sequence[int],
    b_ranks: Sequence[int],
    e_plus: float,
    right_eigenvalues: Optional[np.ndarray] = None,
    force: bool = False,
    skip: Optional[int] = None,
) -> SpikeEstimates:
    """
    観測された Ŷ の外れ値 λ̂_{π_a(i)}, λ̂_{π_b(j)}（ランクは 1 始まり）と既知の A, B からスパイクを推定する。
    レゾルベントは外れ値の固有対（上位 r+s 個、skip で指定可）を除いたバルクから作り、実数 λ̂ で評価する。
    force=True なら E₊ 以下の λ̂ でも計算し、信頼できない印をつける。
    """
    n = len(eigenvalues)
    skip = len(a_ranks) + len(b_ranks) if skip is None else int(skip)
    lam_r = eigenvalues if right_eigenvalues is None else right_eigenvalues
    reliable_gap = n ** RELIABLE_EXPONENT

    def _one(rank: int, lam_all: np.ndarray, vectors: np.ndarray, diag: np.ndarray) -> Tuple[float, bool]:
        if not (1 <= rank <= n):
            raise ConfigError(f"rank={rank} が範囲外です", field="rank")
        lam = float(eigenvalues[rank - 1])
        if lam <= e_plus + INSIDE_BULK_TOL and not force:
            raise OutlierInsideBulk(f"λ̂={lam} が E₊={e_plus} を超えていません", lam=lam, e_plus=e_plus)
        g = bulk_resolvent_diag(lam_all, vectors, lam, skip)
        return estimate_from_diagonal(lam, g, diag, skip), lam - e_plus >= reliable_gap

    a_vals = [_one(k, eigenvalues, left, a_diag) for k in a_ranks]
    b_vals = [_one(k, lam_r, right, b_diag) for k in b_ranks]
    return SpikeEstimates(
        a_hat=np.array([v for v, _ in a_vals], dtype=float),
        b_hat=np.array([v for v, _ in b_vals], dtype=float),
        a_reliable=np.array([ok for _, ok in a_vals], dtype=bool),
        b_reliable=np.array([ok for _, ok in b_vals], dtype=bool),
    )


def _localization(vectors: np.ndarray, count: int) -> np.ndarray:
    # 上位 count 本それぞれの max_k |q_i(k)|²
    return np.max(np.abs(vectors[:, :count]) ** 2, axis=0)


def _count_rule(peaks: np.ndarray, omega: float, rule: str) -> int:
    if rule == "count":
        return int(np.sum(peaks > omega))
    if rule == "argmin":
        below = np.flatnonzero(peaks <= omega)
        return int(below[0]) if below.size else len(peaks)
    raise ConfigError(f"未知の rule: {rule}", field="rule")


def estimate_spike_counts(
    left: np.ndarray,
    right: np.ndarray,
    omega: float,
    fraction: float = 0.4,
    rule: str = "count",
) -> Tuple[int, int]:
    """
    (r̂, ŝ)。上位 c·N 本の特異ベクトルのうち局在しているもの（max_k |û_i(k)|² > ω）から数える。
    rule="count": 局在している本数
    rule="argmin": 最初に ω 以下になる番号 − 1
    """
    if not (0.0 < omega <= 1.0):
        raise ConfigError("omega は (0, 1]", field="omega")
    n = left.shape[0]
    count = max(1, int(math.floor(fraction * n)))
    r_hat = _count_rule(_localization(left, count), omega, rule)
    s_hat = _count_rule(_localization(right, count), omega, rule)
    return r_hat, s_hat


def _null_peak(inst: ModelInstance, fraction: float) -> float:
    d = build_and_decompose(inst)
    count = max(1, int(math.floor(fraction * inst.n)))
    return float(max(np.max(_localization(d.left, count)), np.max(_localization(d.right, count))))


def calibrate_threshold(
    a_diag: np.ndarray,
    b_diag: np.ndarray,
    trials: int,
    seed: int,
    ensemble: Ensemble = Ensemble.UNITARY,
    quantile: float = 0.95,
    factor: float = 2.0,
    fraction: float = 0.4,
    threads: int = 0,
) -> float:
    """
    同じ A, B でスパイクなしの標本を回し、上位ベクトルの最大成分の分位点 × factor を ω にする。
    """
    if int(trials) < 1:
        raise ConfigError("trials は 1 以上", field="trials")
    n = len(a_diag)
    base = ModelInstance(n=n, a_diag=np.asarray(a_diag), b_diag=np.asarray(b_diag), ensemble=ensemble, seed=seed)
    jobs = threads if threads > 0 else min(int(trials), 4)
    peaks = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(_null_peak)(base.with_trial(t), fraction) for t in range(int(trials))
    )
    omega = float(min(1.0, factor * np.quantile(peaks, quantile)))
    logger.info("calibrated omega=%.4g from %d null trials (n=%d)", omega, trials, n)
    return omega
