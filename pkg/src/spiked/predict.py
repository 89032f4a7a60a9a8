from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from src.convolution.edges import m_inverse_real, m_real, z_tilde_upper
from src.errors import SubcriticalTarget
from src.spiked.model import Side, SpikedModel, SpikeLabel
from src.subordination.solver import SubordinationSolution, solve_at
from src.subordination.stability import stability
from src.util.debuglog import get_logger

logger = get_logger(__name__)

# 逆関数が閾値ぎりぎりとみなす幅
SUBCRITICAL_EPS = 1e-12
# π の同順位判定
TIE_TOL = 1e-12
POLISH_STEPS = 5


# -------------------
# Ω の順方向と逆関数（E₊ より右の実軸）
# -------------------

def _polish(model: SpikedModel, x: float, guess: Tuple[complex, complex]) -> SubordinationSolution:
    return solve_at(model.muA, model.muB, complex(x, 0.0), guess=guess, cfg=model.cfg)


def forward_solution(model: SpikedModel, x: float) -> SubordinationSolution:
    """
    実数 x > E₊ での (Ω_A(x), Ω_B(x))。
    外側の枝 Ω_A > Ω_A(E₊) で z̃(Ω_A) = x を解き、Ω_B = M_A^{-1}(M_B(Ω_A)) として Newton で磨く。
    """
    x = float(x)
    if x <= model.e_plus:
        raise SubcriticalTarget(f"x={x} は E₊={model.e_plus} より右である必要があります", x=x)
    muA, muB = model.muA, model.muB
    lo = model.edge.omega_a_at_edge
    f = lambda om: z_tilde_upper(muA, muB, om) - x  # noqa: E731
    if f(lo) >= 0.0:
        oa = lo
    else:
        hi = max(2.0 * lo, 2.0 * x / muA.mean())
        for _ in range(60):
            if f(hi) >= 0.0:
                break
            hi *= 2.0
        oa = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    ob = m_inverse_real(muA, m_real(muB, oa), "upper")
    return _polish(model, x, (complex(oa), complex(ob)))


def omega_forward(which: Side, model: SpikedModel, x: float) -> float:
    sol = forward_solution(model, x)
    return float((sol.omega_a if which == Side.A else sol.omega_b).real)


def inverse_solution(which: Side, model: SpikedModel, target: float) -> SubordinationSolution:
    """
    Ω_which(x) = target を x > E₊ で解く。
    Ω_B^{-1}(t) = t · M_B^{-1}(M_A(t)) / M_A(t)（Ω_A^{-1} は A, B を入れ替え）で出し、
    順方向の解と stability の Ω' で Newton 仕上げをする。
    """
    target = float(target)
    side = Side.A if which == Side.B else Side.B  # Ω_B の逆は A 側スパイクの閾値
    bound = model.threshold(side)
    if target <= bound + SUBCRITICAL_EPS:
        raise SubcriticalTarget(
            f"Ω_{which.value}^{{-1}}({target}) は閾値 Ω_{which.value}(E₊)={bound} を超える必要があります",
            target=target,
            threshold=bound,
        )
    muA, muB = model.muA, model.muB
    if which == Side.B:
        s = m_real(muA, target)
        oa = m_inverse_real(muB, s, "upper")
        ob = target
        x = target * oa / s
    else:
        s = m_real(muB, target)
        ob = m_inverse_real(muA, s, "upper")
        oa = target
        x = target * ob / s

    sol = _polish(model, x, (complex(oa), complex(ob)))
    for _ in range(POLISH_STEPS):
        value = (sol.omega_b if which == Side.B else sol.omega_a).real
        err = value - target
        if abs(err) <= 1e-13 * max(1.0, abs(target)):
            break
        rep = stability(muA, muB, sol)
        slope = (rep.omega_b_prime if which == Side.B else rep.omega_a_prime).real
        if not math.isfinite(slope) or slope <= 0.0:
            break
        x -= err / slope
        sol = _polish(model, x, (sol.omega_a, sol.omega_b))
    return sol


def omega_inverse(which: Side, model: SpikedModel, target: float) -> float:
    return float(inverse_solution(which, model, target).z.real)


def omega_inverse_prime(which: Side, model: SpikedModel, sol: SubordinationSolution) -> float:
    """(Ω^{-1})′(t) = 1 / Ω′(Ω^{-1}(t))"""
    rep = stability(model.muA, model.muB, sol)
    d = (rep.omega_b_prime if which == Side.B else rep.omega_a_prime).real
    return 1.0 / float(d)


def inverse_side(label: SpikeLabel) -> Side:
    # A 側スパイクは Ω_B^{-1}(â)、B 側は Ω_A^{-1}(b̂)
    return Side.B if label.side == Side.A else Side.A


# -------------------
# classify
# -------------------

class Classification(NamedTuple):
    outliers: Tuple[SpikeLabel, ...]
    supercritical: Tuple[SpikeLabel, ...]
    pi: Dict[SpikeLabel, int]
    solutions: Dict[SpikeLabel, SubordinationSolution]

    def location(self, label: SpikeLabel, e_plus: float) -> float:
        sol = self.solutions.get(label)
        return float(sol.z.real) if sol is not None else float(e_plus)

    def label_at(self, rank: int) -> SpikeLabel:
        for lab, k in self.pi.items():
            if k == rank:
                return lab
        raise KeyError(rank)


def _rank_order(a: Tuple[float, SpikeLabel], b: Tuple[float, SpikeLabel]) -> int:
    (xa, la), (xb, lb) = a, b
    if abs(xa - xb) > TIE_TOL * max(1.0, abs(xa), abs(xb)):
        return -1 if xa > xb else 1
    # 同じ位置: A が先、次に元の番号
    ka = (0 if la.side == Side.A else 1, la.index)
    kb = (0 if lb.side == Side.A else 1, lb.index)
    return (ka > kb) - (ka < kb)


def classify(model: SpikedModel) -> Classification:
    """
    O : â_i > Ω_B(E₊)（b̂_j > Ω_A(E₊)）
    O⁺: さらに n^{-1/3} 以上離れている
    π : 予測位置の降順（O 以外の位置は E₊）
    """
    cut = model.n ** (-1.0 / 3.0)
    outliers: List[SpikeLabel] = []
    plus: List[SpikeLabel] = []
    solutions: Dict[SpikeLabel, SubordinationSolution] = {}
    for lab in model.labels():
        g = model.gap(lab)
        if g > SUBCRITICAL_EPS:
            outliers.append(lab)
            solutions[lab] = inverse_solution(inverse_side(lab), model, model.hat(lab))
        if g >= cut:
            plus.append(lab)

    keyed = [(float(solutions[lab].z.real) if lab in solutions else model.e_plus, lab) for lab in model.labels()]
    keyed.sort(key=functools.cmp_to_key(_rank_order))
    pi = {lab: k + 1 for k, (_, lab) in enumerate(keyed)}
    logger.debug("classify: O=%s O+=%s pi=%s", [str(x) for x in outliers], [str(x) for x in plus], {str(k): v for k, v in pi.items()})
    return Classification(outliers=tuple(outliers), supercritical=tuple(plus), pi=pi, solutions=solutions)


# -------------------
# predict_outliers
# -------------------

@dataclass(frozen=True)
class OutlierPrediction:
    label: SpikeLabel
    pi_index: int
    location: float
    fluctuation: float
    supercritical: bool
    gap: float

    def to_record(self) -> Dict[str, Any]:
        return {
            "label": str(self.label),
            "pi_index": self.pi_index,
            "location": self.location,
            "fluctuation": self.fluctuation,
            "supercritical": self.supercritical,
            "gap": self.gap,
        }


def predict_outliers(model: SpikedModel, classification: Optional[Classification] = None) -> List[OutlierPrediction]:
    """
    O のラベル: 位置は Ω^{-1}(â)、ゆらぎは n^{-1/2} (â − Ω_B(E₊))^{1/2}
    それ以外  : 位置は E₊、ゆらぎは n^{-2/3}
    π の順に並べて返す。
    """
    cls = classification if classification is not None else classify(model)
    n = model.n
    out: List[OutlierPrediction] = []
    for lab in model.labels():
        g = model.gap(lab)
        if lab in cls.solutions:
            loc = float(cls.solutions[lab].z.real)
            fl = n ** -0.5 * math.sqrt(g)
        else:
            loc = model.e_plus
            fl = n ** (-2.0 / 3.0)
        out.append(
            OutlierPrediction(
                label=lab,
                pi_index=cls.pi[lab],
                location=loc,
                fluctuation=fl,
                supercritical=lab in cls.supercritical,
                gap=g,
            )
        )
    out.sort(key=lambda p: p.pi_index)
    return out
