from __future__ import annotations

from enum import Enum

import numpy as np


class Ensemble(str, Enum):
    UNITARY = "unitary"
    ORTHOGONAL = "orthogonal"


def sample_haar(n: int, ensemble: Ensemble, rng: np.random.Generator) -> np.ndarray:
    """
    Ginibre 行列の QR 分解から Haar 行列を作る。
    R の対角の位相（直交群なら符号）で Q の列を揃えると分布がちょうど Haar になる。
    """
    n = int(n)
    if n < 1:
        raise ValueError("n は 1 以上")
    ensemble = Ensemble(ensemble)
    if ensemble == Ensemble.UNITARY:
        Z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    else:
        Z = rng.standard_normal((n, n))

    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R)
    if ensemble == Ensemble.UNITARY:
        phase = d / np.abs(d)
    else:
        phase = np.where(d < 0.0, -1.0, 1.0)
    # Q @ diag(phase)
    return Q * phase[np.newaxis, :]
