from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from src.errors import NoConvergence, StabilityDegenerate
from src.measures.spectral import SpectralMeasure, transform_arrays
from src.subordination.solver import SubordinationSolution

DEGENERATE_TOL = 1e-13
RESIDUAL_CEILING = 1e-9


@dataclass(frozen=True)
class StabilityReport:
    s_ab: complex
    t_a: complex
    t_b: complex
    omega_a_prime: complex
    omega_b_prime: complex

    def to_record(self) -> Dict[str, Any]:
        return {k: [v.real, v.imag] for k, v in self.__dict__.items()}


def stability(muA: SpectralMeasure, muB: SpectralMeasure, sol: SubordinationSolution) -> StabilityReport:
    """
    S_AB = z² L'_B(Ω_A) L'_A(Ω_B) - 1
    T_A  = ½ [ z L''_B(Ω_A) L'_A(Ω_B) + (z L'_B(Ω_A))² L''_A(Ω_B) ]   （T_B は A, B を入れ替えたもの）
    Ω'   は [[z L'_B, -1], [-1, z L'_A]] (Ω'_A, Ω'_B)ᵀ = -(Ω_B, Ω_A)ᵀ / z を解いたもの
    """
    if sol.residual > RESIDUAL_CEILING:
        raise NoConvergence(f"解の残差が大きすぎます ({sol.residual:.2e})", residual=sol.residual)
    z, oa, ob = sol.z, sol.omega_a, sol.omega_b
    ta = transform_arrays(muA, np.array([ob]), order=2)
    tb = transform_arrays(muB, np.array([oa]), order=2)
    la1, la2 = complex(ta.L1[0]), complex(ta.L2[0])
    lb1, lb2 = complex(tb.L1[0]), complex(tb.L2[0])

    s_ab = z * z * lb1 * la1 - 1.0
    t_a = 0.5 * (z * lb2 * la1 + (z * lb1) ** 2 * la2)
    t_b = 0.5 * (z * la2 * lb1 + (z * la1) ** 2 * lb2)
    if abs(s_ab) < DEGENERATE_TOL:
        raise StabilityDegenerate(f"S_AB が 0 に近すぎます (|S|={abs(s_ab):.2e}, z={z})", z=z)

    oa_prime = -(z * la1 * ob + oa) / (z * s_ab)
    ob_prime = -(ob + z * lb1 * oa) / (z * s_ab)
    return StabilityReport(s_ab=s_ab, t_a=t_a, t_b=t_b, omega_a_prime=oa_prime, omega_b_prime=ob_prime)
