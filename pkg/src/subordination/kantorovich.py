from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from src.measures.spectral import SpectralMeasure, transform_arrays
from src.subordination.config import DEFAULT_CONFIG, SolverConfig
from src.subordination.system import evaluate, jacobian


@dataclass(frozen=True)
class KantorovichCertificate:
    """
    Newton 法の収束証明書。
    b = |DΦ(x0)^{-1} Φ(x0)|,  L = |DΦ(x0)^{-1}| * sup|D²Φ|,
    t* = (1 - sqrt(1 - 2bL)) / L
    passed のとき Newton 反復は x0 中心・半径 t* の球の中の解に収束する。
    """
    b: float
    L: float
    t_star: float
    passed: bool

    def to_record(self) -> Dict[str, Any]:
        return {"b": self.b, "L": self.L, "t_star": self.t_star, "passed": self.passed}


def _failed(b: float = math.inf, L: float = math.inf) -> KantorovichCertificate:
    return KantorovichCertificate(b=float(b), L=float(L), t_star=math.inf, passed=False)


def _circle(center: complex, radius: float, samples: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(samples) / samples
    return center + radius * np.exp(1j * theta)


def _region_ok(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    z: complex,
    oa: complex,
    ob: complex,
    radius: float,
    margin: float,
) -> bool:
    """
    半径 radius の球が許容領域に収まるか。
      ・両方の台から margin 以上離れる
      ・im z > 0 なら上半平面に留まる
      ・|ω| * mean / |z| >= 1/4（|z| に比べて ω が潰れない）
    """
    if muB.distance_to_support(oa)[0] <= radius + margin:
        return False
    if muA.distance_to_support(ob)[0] <= radius + margin:
        return False
    if z.imag > 0.0 and (oa.imag - radius <= 0.0 or ob.imag - radius <= 0.0):
        return False
    floor = 0.25 * abs(z)
    if (abs(oa) - radius) * muA.mean() < floor or (abs(ob) - radius) * muB.mean() < floor:
        return False
    return True


def certify(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    z: complex,
    point: Tuple[complex, complex],
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> KantorovichCertificate:
    z = complex(z)
    oa, ob = complex(point[0]), complex(point[1])
    if muB.distance_to_support(oa)[0] <= cfg.support_margin or muA.distance_to_support(ob)[0] <= cfg.support_margin:
        return _failed()

    ev = evaluate(muA, muB, np.array([oa]), np.array([ob]), np.array([z]))
    J = jacobian(ev, z)
    if not np.all(np.isfinite(J)) or not (np.isfinite(ev.phi_a[0]) and np.isfinite(ev.phi_b[0])):
        return _failed()
    try:
        jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError:
        return _failed()

    F = np.array([ev.phi_a[0], ev.phi_b[0]])
    b = float(np.linalg.norm(jinv @ F))
    jinv_norm = float(np.linalg.norm(jinv, 2))

    # t* <= 2b なので半径 2b の円板上で |L''| の上限を取る（最大値原理で円周をサンプル）
    radius = max(2.0 * b, 1e-14 * max(1.0, abs(oa), abs(ob)))
    if not _region_ok(muA, muB, z, oa, ob, radius, cfg.support_margin):
        return _failed(b=b)

    pts_b = np.concatenate([[ob], _circle(ob, radius, cfg.certificate_samples)])
    pts_a = np.concatenate([[oa], _circle(oa, radius, cfg.certificate_samples)])
    la2 = transform_arrays(muA, pts_b, order=2, check=False).L2
    lb2 = transform_arrays(muB, pts_a, order=2, check=False).L2
    sup2 = float(max(np.max(np.abs(la2)), np.max(np.abs(lb2))))
    if not np.isfinite(sup2):
        return _failed(b=b)
    sup2 *= cfg.certificate_safety

    L = jinv_norm * sup2
    h = 2.0 * b * L
    if L == 0.0:
        return KantorovichCertificate(b=b, L=0.0, t_star=b, passed=True)
    if h >= 1.0:
        return KantorovichCertificate(b=b, L=L, t_star=math.inf, passed=False)
    # (1 - sqrt(1 - h)) / L と同じ値（桁落ちしない形）
    t_star = 2.0 * b / (1.0 + math.sqrt(1.0 - h))
    return KantorovichCertificate(b=b, L=L, t_star=float(t_star), passed=True)
