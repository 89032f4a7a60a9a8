from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.measures.spectral import SpectralMeasure, transform_arrays, transforms


@dataclass(frozen=True)
class SystemEval:
    """
    Φ_A = L_A(ω_b) - ω_a/z,  Φ_B = L_B(ω_a) - ω_b/z の配列評価。
    la1 = L'_A(ω_b), lb1 = L'_B(ω_a)（ヤコビアンの非対角）
    """
    phi_a: np.ndarray
    phi_b: np.ndarray
    la1: np.ndarray
    lb1: np.ndarray

    def residual(self) -> np.ndarray:
        r = np.maximum(np.abs(self.phi_a), np.abs(self.phi_b))
        return np.where(np.isfinite(r), r, np.inf)

    def subset(self, mask: np.ndarray) -> "SystemEval":
        return SystemEval(self.phi_a[mask], self.phi_b[mask], self.la1[mask], self.lb1[mask])


def phi(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    omega_a: complex,
    omega_b: complex,
    z: complex,
) -> Tuple[complex, complex]:
    z = complex(z)
    w1, w2 = complex(omega_a), complex(omega_b)
    phi_a = transforms(muA, w2).M / w2 - w1 / z
    phi_b = transforms(muB, w1).M / w1 - w2 / z
    return phi_a, phi_b


def evaluate(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    oa: np.ndarray,
    ob: np.ndarray,
    z: np.ndarray,
) -> SystemEval:
    ta = transform_arrays(muA, ob, order=1, check=False)
    tb = transform_arrays(muB, oa, order=1, check=False)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return SystemEval(
            phi_a=ta.L - oa / z,
            phi_b=tb.L - ob / z,
            la1=ta.L1,
            lb1=tb.L1,
        )


def newton_delta(ev: SystemEval, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    DΦ = [[-1/z, L'_A(ω_b)], [L'_B(ω_a), -1/z]] に対する Newton 方向 -DΦ^{-1}Φ。
    A と B を入れ替えると結果もそのまま入れ替わる形で書く。
    """
    p = -1.0 / z
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        det = p * p - ev.la1 * ev.lb1
        da = -(p * ev.phi_a - ev.la1 * ev.phi_b) / det
        db = -(p * ev.phi_b - ev.lb1 * ev.phi_a) / det
    return da, db


def jacobian(ev: SystemEval, z: complex, k: int = 0) -> np.ndarray:
    p = -1.0 / complex(z)
    return np.array([[p, ev.la1[k]], [ev.lb1[k], p]], dtype=complex)


def outside_margin(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    oa: np.ndarray,
    ob: np.ndarray,
    margin: float,
) -> np.ndarray:
    # ω_a は μ_B の変換に、ω_b は μ_A の変換に入る
    ok = (muB.distance_to_support(oa) > margin) & (muA.distance_to_support(ob) > margin)
    return ok & np.isfinite(oa) & np.isfinite(ob)


def herglotz_ok(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    oa: np.ndarray,
    ob: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """
    im Ω_A >= im z / mean(μ_A), im Ω_B >= im z / mean(μ_B)
    （平均 1 の測度なら im Ω >= im z）
    """
    eta = z.imag
    slack = 1.0 - 1e-12
    ok_a = oa.imag >= slack * eta / muA.mean()
    ok_b = ob.imag >= slack * eta / muB.mean()
    return np.where(eta > 0.0, ok_a & ok_b, True)


def default_guess(muA: SpectralMeasure, muB: SpectralMeasure, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # 大きい |z| では Ω_A ≈ z/mean(μ_A), Ω_B ≈ z/mean(μ_B)
    return z / muA.mean(), z / muB.mean()
