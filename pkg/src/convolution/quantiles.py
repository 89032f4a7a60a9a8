from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from scipy.integrate import cumulative_trapezoid

from src.convolution.density import ConvolutionResult
from src.errors import ConfigError
from src.util.debuglog import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class QuantileTable:
    """γ_1 ≥ … ≥ γ_n（∫_{γ_j}^∞ ρ = j/n）"""
    n: int
    gammas: np.ndarray

    def gamma(self, j: int) -> float:
        # 1 始まり
        return float(self.gammas[j - 1])

    def to_record(self) -> Dict[str, Any]:
        return {"n": self.n, "gammas": [float(g) for g in self.gammas]}


def quantiles(result: ConvolutionResult, n: int) -> QuantileTable:
    if int(n) < 1:
        raise ConfigError("n は正の整数", field="n")
    n = int(n)
    x = result.grid
    rho = np.nan_to_num(result.density)
    lo, hi = result.e_minus, result.e_plus

    # [E-, E+] に制限し、端点を足す
    inside = (x > lo) & (x < hi)
    xs = np.concatenate([[lo], x[inside], [hi]])
    rs = np.concatenate([[np.interp(lo, x, rho)], rho[inside], [np.interp(hi, x, rho)]])
    cum = cumulative_trapezoid(rs, xs, initial=0.0)
    total = float(cum[-1])
    if total <= 0.0:
        logger.warning("quantiles: no mass inside [%.6g, %.6g]", lo, hi)
        return QuantileTable(n=n, gammas=np.full(n, lo))

    tail = (total - cum) / total  # x について単調減少、1 -> 0
    targets = np.arange(1, n + 1) / n
    g = np.interp(targets, tail[::-1], xs[::-1])
    g = np.minimum.accumulate(np.clip(g, lo, hi))
    return QuantileTable(n=n, gammas=g)
