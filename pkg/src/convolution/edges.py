from __future__ import annotations

from typing import Callable, List, NamedTuple, Tuple

import numpy as np
from scipy.optimize import brentq, newton

from src.errors import EdgeBracketFailure
from src.measures.spectral import SpectralMeasure, transform_arrays
from src.subordination.config import DEFAULT_CONFIG, SolverConfig
from src.util.debuglog import get_logger

logger = get_logger(__name__)

# 台の端からどれだけ離して評価するか（相対）
EDGE_OFFSET = 1e-9
# M^{-1} の上側ブラケットの右端
M_INVERSE_HI = 1e6
SCAN_POINTS = 320
# 硬い端の候補は台の端から EDGE_OFFSET 程度ずれる
HARD_EDGE_RTOL = 1e-7


class UpperEdge(NamedTuple):
    e_plus: float
    omega_a_at_edge: float
    omega_b_at_edge: float


class LowerEdge(NamedTuple):
    e_minus: float
    omega_a_at_edge: float
    omega_b_at_edge: float


# -------------------
# 実軸上の M とその逆関数
# -------------------

def m_real(mu: SpectralMeasure, w: float) -> float:
    return float(transform_arrays(mu, np.array([complex(w)]), order=0, check=False).M[0].real)


def m_real_prime(mu: SpectralMeasure, w: float) -> float:
    # M = w L なので M' = L + w L'
    t = transform_arrays(mu, np.array([complex(w)]), order=1, check=False)
    return float((t.L[0] + w * t.L1[0]).real)


def _ray(mu: SpectralMeasure, side: str) -> Tuple[float, float]:
    if side == "upper":
        return mu.support_hi * (1.0 + EDGE_OFFSET), M_INVERSE_HI * max(1.0, mu.support_hi)
    return mu.support_lo * 1e-12, mu.support_lo * (1.0 - EDGE_OFFSET)


def m_inverse_real(mu: SpectralMeasure, target: float, side: str = "upper") -> float:
    """
    実軸上で M_μ(w) = target を解く。
    upper: w > supp の右端（M は 1 より大きい側で単調増加）
    lower: 0 < w < supp の左端（M は (0, 1) で単調増加）
    二分法で囲い込んでから Newton で仕上げる。
    """
    lo, hi = _ray(mu, side)
    f_lo = m_real(mu, lo) - target
    f_hi = m_real(mu, hi) - target
    if f_lo > 0.0 or f_hi < 0.0:
        raise EdgeBracketFailure(
            f"M^{{-1}}({target}) が {side} 側の区間 [{lo:.6g}, {hi:.6g}] にありません",
            target=target,
            side=side,
        )
    if f_lo == 0.0:
        return lo
    w = brentq(lambda x: m_real(mu, x) - target, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    # Newton 仕上げ（区間を出たら bisection の値を使う）
    for _ in range(3):
        d = m_real_prime(mu, w)
        if not np.isfinite(d) or d <= 0.0:
            break
        step = (m_real(mu, w) - target) / d
        nxt = w - step
        if not (lo <= nxt <= hi):
            break
        w = nxt
        if abs(step) <= 1e-16 * abs(w):
            break
    return float(w)


# -------------------
# z̃ パラメータ表示
# -------------------

def _z_tilde(muA: SpectralMeasure, muB: SpectralMeasure, omega: float, side: str) -> Tuple[float, float, float]:
    """
    Ω (= Ω_A, μ_B の引数) に対して
      t = M_B(Ω), w = M_A^{-1}(t), z̃ = Ω w / t
    を返す: (z̃, z̃', w)
    """
    t = m_real(muB, omega)
    w = m_inverse_real(muA, t, side)
    dt = m_real_prime(muB, omega)
    dw = dt / m_real_prime(muA, w)
    zt = omega * w / t
    dzt = (w + omega * dw) / t - omega * w * dt / (t * t)
    return zt, dzt, w


def z_tilde_upper(muA: SpectralMeasure, muB: SpectralMeasure, omega: float) -> float:
    return _z_tilde(muA, muB, omega, "upper")[0]


def z_tilde_lower(muA: SpectralMeasure, muB: SpectralMeasure, omega: float) -> float:
    return _z_tilde(muA, muB, omega, "lower")[0]


def _domain(muA: SpectralMeasure, muB: SpectralMeasure, side: str) -> Tuple[float, float]:
    """z̃ が定義される Ω の区間（M_A^{-1} が存在する範囲に制限）"""
    a_lo, a_hi = _ray(muA, side)
    if side == "upper":
        om_lo = muB.support_hi * (1.0 + EDGE_OFFSET)
        om_hi = 50.0 * muB.support_hi
        need = m_real(muA, a_lo)
        if m_real(muB, om_lo) < need:
            om_lo = m_inverse_real(muB, need, "upper") * (1.0 + 1e-12)
        return om_lo, om_hi
    om_lo = 0.02 * muB.support_lo
    om_hi = muB.support_lo * (1.0 - EDGE_OFFSET)
    need = m_real(muA, a_hi)
    if m_real(muB, om_hi) > need:
        om_hi = m_inverse_real(muB, need, "lower") * (1.0 - 1e-12)
    return om_lo, om_hi


def _scan(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    side: str,
    fn: Callable[[float], float],
) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = _domain(muA, muB, side)
    if side == "upper":
        s = np.geomspace(1e-9, hi / lo - 1.0, SCAN_POINTS)
        omegas = lo * (1.0 + s)
    else:
        s = np.geomspace(1e-9, 1.0 - lo / hi, SCAN_POINTS)
        omegas = hi * (1.0 - s)
    vals = np.array([fn(float(om)) for om in omegas])
    return omegas, vals


def _refine(fn: Callable[[float], float], a: float, b: float) -> float:
    x = brentq(fn, min(a, b), max(a, b), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    try:
        y = float(newton(fn, x, tol=1e-15, maxiter=4))
        if min(a, b) <= y <= max(a, b) and abs(fn(y)) <= abs(fn(x)):
            return y
    except (RuntimeError, ZeroDivisionError, OverflowError):
        pass
    return float(x)


def _critical(muA: SpectralMeasure, muB: SpectralMeasure, side: str) -> Tuple[float, float, float]:
    """
    upper: z̃ の最小値（z̃' が - から + へ変わる点）
    lower: z̃ の最大値（z̃' が + から - へ変わる点）
    z̃ が区間全体で単調に台の端へ向かう場合は、端での極限値（硬い端）を返す。
    """
    dfn = lambda om: _z_tilde(muA, muB, om, side)[1]  # noqa: E731
    omegas, d = _scan(muA, muB, side, dfn)
    # omegas は台の端から離れる向きに並ぶ。端の近くでは z̃' < 0 が正則な端、
    # 端で既に z̃' >= 0 なら z̃ は端に向かって単調（硬い端）
    slope = d

    cands: List[float] = []
    for k in range(1, len(omegas)):
        if slope[k - 1] < 0.0 <= slope[k]:
            cands.append(_refine(dfn, float(omegas[k - 1]), float(omegas[k])))
    if slope[0] >= 0.0:
        cands.append(float(omegas[0]))
    if not cands:
        raise EdgeBracketFailure(
            f"z̃' の符号変化が見つかりません（{side} edge, Ω ∈ [{omegas.min():.6g}, {omegas.max():.6g}]）",
            side=side,
        )

    vals = [(_z_tilde(muA, muB, om, side), om) for om in cands]
    if side == "upper":
        (zt, _, w), om = min(vals, key=lambda v: v[0][0])
    else:
        (zt, _, w), om = max(vals, key=lambda v: v[0][0])
    logger.debug("%s edge: z=%.12g omega_a=%.12g omega_b=%.12g (candidates=%d)", side, zt, om, w, len(cands))
    return float(zt), float(om), float(w)


def find_upper_edge(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> UpperEdge:
    e, oa, ob = _critical(muA, muB, "upper")
    cap = muA.support_hi * muB.support_hi
    if e > cap * (1.0 + HARD_EDGE_RTOL):
        raise EdgeBracketFailure(f"E+={e} が a_1 b_1={cap} を超えています", e_plus=e)
    return UpperEdge(e_plus=min(e, cap), omega_a_at_edge=oa, omega_b_at_edge=ob)


def find_lower_edge(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> LowerEdge:
    e, oa, ob = _critical(muA, muB, "lower")
    floor = muA.support_lo * muB.support_lo
    if e < floor * (1.0 - HARD_EDGE_RTOL):
        raise EdgeBracketFailure(f"E-={e} が a_N b_N={floor} を下回っています", e_minus=e)
    return LowerEdge(e_minus=max(e, floor), omega_a_at_edge=oa, omega_b_at_edge=ob)


def edge_by_stability(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> float:
    """
    検算用: 実軸の z̃ 表示に沿って S_AB = z² L'_B(Ω_A) L'_A(Ω_B) - 1 の零点を探す。
    """

    def s_ab(om: float) -> float:
        zt, _, w = _z_tilde(muA, muB, om, "upper")
        lb1 = transform_arrays(muB, np.array([complex(om)]), order=1, check=False).L1[0]
        la1 = transform_arrays(muA, np.array([complex(w)]), order=1, check=False).L1[0]
        return float((zt * zt * lb1 * la1).real - 1.0)

    omegas, s = _scan(muA, muB, "upper", s_ab)
    for k in range(1, len(omegas)):
        if np.sign(s[k - 1]) != np.sign(s[k]) and np.isfinite(s[k - 1]) and np.isfinite(s[k]):
            om = _refine(s_ab, float(omegas[k - 1]), float(omegas[k]))
            return float(z_tilde_upper(muA, muB, om))
    raise EdgeBracketFailure("S_AB の零点が見つかりません", side="upper")
