from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
from scipy.stats import kstest
from typing_extensions import Self

from src.convolution.density import ConvolutionResult
from src.convolution.quantiles import QuantileTable
from src.errors import ConfigError
from src.rmt_lab.instance import Decomposition
from src.subordination.solver import SubordinationSolution

# 上位 c·n 本だけを見る
DEFAULT_FRACTION = 0.4


# -------------------
# local law
# -------------------

@dataclass(frozen=True)
class LocalLawResult:
    z: complex
    diag_dev_a: float
    diag_dev_b: float
    offdiag_max: float
    averaged_dev: float
    ward_dev: float

    def to_record(self) -> Dict[str, Any]:
        return {
            "z": [self.z.real, self.z.imag],
            "diag_dev_a": self.diag_dev_a,
            "diag_dev_b": self.diag_dev_b,
            "offdiag_max": self.offdiag_max,
            "averaged_dev": self.averaged_dev,
            "ward_dev": self.ward_dev,
        }


def _ward_deviation(G: np.ndarray, eta: float) -> float:
    # Σ_j |G̃_ij|² = Im G̃_ii / η
    if eta <= 0.0:
        return 0.0
    lhs = np.sum(np.abs(G) ** 2, axis=1)
    rhs = np.diag(G).imag / eta
    return float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))))


def local_law_check(decomp: Decomposition, solutions: Sequence[SubordinationSolution]) -> List[LocalLawResult]:
    """
    各 z で
      max_i |z G_ii + 1 − a_i/(a_i − Ω_B)|、max_i |z 𝒢_ii + 1 − b_i/(b_i − Ω_A)|、
      max_{i≠j} |G_ij|（G_ij = √(a_i/a_j) G̃_ij）、平均形 |(1/N) Σ_i (…)|、Ward の恒等式のずれ
    """
    inst = decomp.instance
    a, b = inst.a_diag, inst.b_diag
    scale = np.sqrt(a)[:, np.newaxis] / np.sqrt(a)[np.newaxis, :]
    out: List[LocalLawResult] = []
    for sol in solutions:
        z = complex(sol.z)
        G = decomp.resolvent(z, "left")
        g_diag = np.diag(G)
        gb_diag = decomp.resolvent_diag(z, "right")
        dev_a = z * g_diag + 1.0 - a / (a - sol.omega_b)
        dev_b = z * gb_diag + 1.0 - b / (b - sol.omega_a)
        off = np.abs(G * scale)
        np.fill_diagonal(off, 0.0)
        out.append(
            LocalLawResult(
                z=z,
                diag_dev_a=float(np.max(np.abs(dev_a))),
                diag_dev_b=float(np.max(np.abs(dev_b))),
                offdiag_max=float(np.max(off)),
                averaged_dev=float(abs(np.mean(dev_a))),
                ward_dev=_ward_deviation(G, z.imag),
            )
        )
    return out


@dataclass(frozen=True)
class FarLocalLawResult:
    z: complex
    kappa: float
    diag_dev: float
    entry_max: float
    stieltjes_dev: float
    entry_scale: float
    stieltjes_scale: float

    def to_record(self) -> Dict[str, Any]:
        return {
            "z": [self.z.real, self.z.imag],
            "kappa": self.kappa,
            "diag_dev": self.diag_dev,
            "entry_max": self.entry_max,
            "stieltjes_dev": self.stieltjes_dev,
            "entry_scale": self.entry_scale,
            "stieltjes_scale": self.stieltjes_scale,
        }


def far_local_law_check(
    decomp: Decomposition,
    solutions: Sequence[SubordinationSolution],
    m_theory: Sequence[complex],
    e_plus: float,
) -> List[FarLocalLawResult]:
    """
    台の右（Re z > E₊）での局所則。実軸まで下ろしてよい。
    尺度は n^{-1/2}(κ+η)^{-1/4}（成分）と 1/(n(κ+η))（Stieltjes 変換）。
    """
    inst = decomp.instance
    a, n = inst.a_diag, inst.n
    out: List[FarLocalLawResult] = []
    for sol, m_th in zip(solutions, m_theory):
        z = complex(sol.z)
        kappa = z.real - e_plus
        if kappa <= 0.0:
            raise ConfigError(f"z={z} は E₊={e_plus} より右にある必要があります", field="z")
        G = decomp.resolvent(z, "left")
        dev = z * np.diag(G) + 1.0 - a / (a - sol.omega_b)
        m_h = complex(np.mean(1.0 / (decomp.eigenvalues - z)))
        span = kappa + z.imag
        out.append(
            FarLocalLawResult(
                z=z,
                kappa=kappa,
                diag_dev=float(np.max(np.abs(dev))),
                entry_max=float(np.max(np.abs(G))),
                stieltjes_dev=float(abs(m_h - complex(m_th))),
                entry_scale=float(n ** -0.5 * span ** -0.25),
                stieltjes_scale=float(1.0 / (n * span)),
            )
        )
    return out


# -------------------
# rigidity / delocalization / global law
# -------------------

@dataclass(frozen=True)
class RigiditySummary:
    per_trial_max: List[float]
    median: float
    top_gap: List[float]  # |λ_1 − γ_1|

    def to_record(self) -> Dict[str, Any]:
        return {"per_trial_max": self.per_trial_max, "median": self.median, "top_gap": self.top_gap}


def _count(n: int, fraction: float) -> int:
    if not (0.0 < fraction <= 0.5):
        raise ConfigError("fraction は (0, 1/2]", field="fraction")
    return max(1, int(math.floor(fraction * n)))


def rigidity_ratios(eigenvalues: np.ndarray, table: QuantileTable, fraction: float = DEFAULT_FRACTION) -> np.ndarray:
    """|λ_i − γ_i| · i^{1/3} · n^{2/3}（i ≤ c·n）"""
    n = len(eigenvalues)
    if table.n != n:
        raise ConfigError(f"分位点表の n={table.n} と固有値の数 {n} が違います", field="n")
    k = _count(n, fraction)
    i = np.arange(1, k + 1)
    return np.abs(eigenvalues[:k] - table.gammas[:k]) * i ** (1.0 / 3.0) * n ** (2.0 / 3.0)


def rigidity_check(
    eigenvalue_rows: Sequence[np.ndarray],
    table: QuantileTable,
    fraction: float = DEFAULT_FRACTION,
) -> RigiditySummary:
    if not eigenvalue_rows:
        raise ConfigError("trials は 1 以上", field="trials")
    maxima = [float(np.max(rigidity_ratios(np.asarray(row), table, fraction))) for row in eigenvalue_rows]
    top = [float(abs(row[0] - table.gammas[0])) for row in eigenvalue_rows]
    return RigiditySummary(per_trial_max=maxima, median=float(np.median(maxima)), top_gap=top)


def delocalization_statistic(decomp: Decomposition, fraction: float = DEFAULT_FRACTION, exclude: int = 0) -> float:
    """
    n · max_{exclude < k ≤ c·n} max(max_i |u_k(i)|², max_μ |v_k(μ)|²)。
    exclude 本の上位ベクトル（外れ値のもの）は集合から外す。
    """
    n = decomp.instance.n
    k = _count(n, fraction)
    lo = min(int(exclude), k)
    if lo >= k:
        return 0.0
    u = np.abs(decomp.left[:, lo:k]) ** 2
    v = np.abs(decomp.right[:, lo:k]) ** 2
    return float(n * max(np.max(u), np.max(v)))


def global_law_distance(eigenvalues: np.ndarray, result: ConvolutionResult) -> float:
    """経験スペクトル分布と ρ の CDF の Kolmogorov 距離"""
    return float(kstest(np.asarray(eigenvalues, dtype=float), result.cdf).statistic)


@dataclass(frozen=True)
class DelocalizationSummary:
    per_trial: List[float]
    median: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> Self:
        vals = [float(v) for v in values]
        return cls(per_trial=vals, median=float(np.median(vals)) if vals else math.nan)

    def to_record(self) -> Dict[str, Any]:
        return {"per_trial": self.per_trial, "median": self.median}


def delocalization_check(
    decomps: Sequence[Decomposition],
    fraction: float = DEFAULT_FRACTION,
    exclude: int = 0,
) -> DelocalizationSummary:
    return DelocalizationSummary.from_values([delocalization_statistic(d, fraction, exclude) for d in decomps])
