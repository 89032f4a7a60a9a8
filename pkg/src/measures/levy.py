from __future__ import annotations

import numpy as np

from src.measures.spectral import SpectralMeasure

_BISECT_STEPS = 60


def _pdf(mu: SpectralMeasure, x: np.ndarray) -> np.ndarray:
    # atomic は連続部分なし
    if mu.is_atomic:
        return np.zeros_like(x)
    return np.interp(x, mu.locations, mu.weights, left=0.0, right=0.0)


def _turning_points(mu1: SpectralMeasure, mu2: SpectralMeasure, shift: float, cells: np.ndarray) -> np.ndarray:
    """
    F2(x) - F1(x+shift) の各セル内の極値点。
    セル内では両方の密度が線形なので、密度差の符号が変わる点を線形に解けばよい。
    """
    if mu1.is_atomic and mu2.is_atomic or len(cells) < 2:
        return np.empty(0)
    x0, x1 = cells[:-1], cells[1:]
    inset = 1e-9 * (x1 - x0)
    t0, t1 = x0 + inset, x1 - inset
    d0 = _pdf(mu2, t0) - _pdf(mu1, t0 + shift)
    d1 = _pdf(mu2, t1) - _pdf(mu1, t1 + shift)
    flip = (d0 * d1 < 0.0) & (x1 > x0)
    return t0[flip] + (t1[flip] - t0[flip]) * d0[flip] / (d0[flip] - d1[flip])


def _holds(mu1: SpectralMeasure, mu2: SpectralMeasure, eps: float, base: np.ndarray) -> bool:
    # F1(x-ε) - ε <= F2(x) <= F1(x+ε) + ε をセル端と各セルの極値点で確認する
    cells = np.unique(np.concatenate([base, base + eps, base - eps]))
    shift = 1e-12 * max(1.0, float(np.max(np.abs(cells))))
    pts = np.concatenate([
        cells,
        cells - shift,
        _turning_points(mu1, mu2, -eps, cells),
        _turning_points(mu1, mu2, eps, cells),
    ])
    f_lo = mu1.cdf(pts - eps) - eps
    f_hi = mu1.cdf(pts + eps) + eps
    g = mu2.cdf(pts)
    return bool(np.all(f_lo <= g + 1e-15) and np.all(g <= f_hi + 1e-15))


def levy_distance(mu1: SpectralMeasure, mu2: SpectralMeasure) -> float:
    """
    Lévy 距離 inf{ε : F1(x-ε)-ε <= F2(x) <= F1(x+ε)+ε  ∀x}。
    両測度の折れ点（atom / grid 節点）を ±ε ずらしてセルに分け、
    セル端と各セル内の極値点で判定して ε を二分法で詰める。
    """
    b = np.union1d(mu1.breakpoints(), mu2.breakpoints())
    if _holds(mu1, mu2, 0.0, b):
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if _holds(mu1, mu2, mid, b):
            hi = mid
        else:
            lo = mid
    return float(hi)
