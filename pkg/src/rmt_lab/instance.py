from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from typing_extensions import Self

from src.errors import ConfigError, DecompositionFailure
from src.measures.spectral import SpectralMeasure
from src.rmt_lab.haar import Ensemble, sample_haar
from src.spiked.model import SpikedModel
from src.util.debuglog import get_logger

logger = get_logger(__name__)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    # (seed, trial) ごとに独立な系列。並列に回しても同じ乱数になる
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(trial),)))


@dataclass(frozen=True, eq=False)
class ModelInstance:
    """
    H̃ = A^{1/2} U B U* A^{1/2} の 1 標本分の設定。
    a_spike_pos[i] はスパイク i（0 始まり）が降順対角のどこにいるか。
    """
    n: int
    a_diag: np.ndarray
    b_diag: np.ndarray
    ensemble: Ensemble = Ensemble.UNITARY
    seed: int = 0
    trial: int = 0
    a_spike_pos: Tuple[int, ...] = field(default=())
    b_spike_pos: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        a = np.asarray(self.a_diag, dtype=float)
        b = np.asarray(self.b_diag, dtype=float)
        object.__setattr__(self, "a_diag", a)
        object.__setattr__(self, "b_diag", b)
        object.__setattr__(self, "ensemble", Ensemble(self.ensemble))
        if int(self.n) < 2:
            raise ConfigError("n は 2 以上", field="n")
        if a.shape != (self.n,) or b.shape != (self.n,):
            raise ConfigError("a_diag / b_diag の長さが n と一致しません", field="n")
        if np.any(a <= 0.0) or np.any(b <= 0.0):
            raise ConfigError("対角成分は正である必要があります")
        if np.any(np.diff(a) > 0.0) or np.any(np.diff(b) > 0.0):
            raise ConfigError("対角成分は降順である必要があります")

    def rng(self) -> np.random.Generator:
        return trial_rng(self.seed, self.trial)

    def with_trial(self, trial: int) -> Self:
        return replace(self, trial=int(trial))


def _sorted_with_positions(diag: np.ndarray, spikes: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    order = np.argsort(-diag, kind="stable")
    where = np.empty_like(order)
    where[order] = np.arange(len(order))
    return diag[order], tuple(int(where[i]) for i in range(spikes))


def instance_from_measures(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    n: int,
    ensemble: Ensemble = Ensemble.UNITARY,
    seed: int = 0,
    model: Optional[SpikedModel] = None,
    trial: int = 0,
) -> ModelInstance:
    """対角は測度の n 分位点。model があれば先頭の成分にスパイクを乗せる"""
    if model is None:
        return ModelInstance(
            n=int(n),
            a_diag=muA.quantile_values(n),
            b_diag=muB.quantile_values(n),
            ensemble=ensemble,
            seed=seed,
            trial=trial,
        )
    if model.n != int(n):
        raise ConfigError(f"モデルの n={model.n} と指定の n={n} が違います", field="n")
    a, b = model.spiked_diagonals()
    a_sorted, a_pos = _sorted_with_positions(a, model.r)
    b_sorted, b_pos = _sorted_with_positions(b, model.s)
    return ModelInstance(
        n=int(n),
        a_diag=a_sorted,
        b_diag=b_sorted,
        ensemble=ensemble,
        seed=seed,
        trial=trial,
        a_spike_pos=a_pos,
        b_spike_pos=b_pos,
    )


# -------------------
# 分解
# -------------------

@dataclass(frozen=True, eq=False)
class Decomposition:
    """
    eigenvalues: H̃ の固有値（降順）。left[:, k] = u_k
    right_eigenvalues / right: 𝓗̃ = B^{1/2} U* A U B^{1/2} のもの（right[:, k] = v_k）
    """
    instance: ModelInstance
    eigenvalues: np.ndarray
    left: np.ndarray
    right_eigenvalues: np.ndarray
    right: np.ndarray
    h_tilde: np.ndarray

    def vectors(self, side: str = "left") -> np.ndarray:
        return self.left if side == "left" else self.right

    def resolvent(self, z: complex, side: str = "left", skip: int = 0) -> np.ndarray:
        """G̃(z)（side="right" なら 𝒢̃）。skip 個の上位固有対は除く"""
        lam = self.eigenvalues if side == "left" else self.right_eigenvalues
        Q = self.vectors(side)[:, skip:]
        w = 1.0 / (lam[skip:] - z)
        return (Q * w[np.newaxis, :]) @ Q.conj().T

    def resolvent_diag(self, z: complex, side: str = "left", skip: int = 0) -> np.ndarray:
        lam = self.eigenvalues if side == "left" else self.right_eigenvalues
        Q = self.vectors(side)[:, skip:]
        return (np.abs(Q) ** 2) @ (1.0 / (lam[skip:] - z))

    def reconstruction_error(self) -> float:
        Q, lam = self.left, self.eigenvalues
        rec = (Q * lam[np.newaxis, :]) @ Q.conj().T
        return float(np.linalg.norm(self.h_tilde - rec) / np.linalg.norm(self.h_tilde))


def _hermitian_eigh(M: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    try:
        lam, Q = np.linalg.eigh(M)
    except np.linalg.LinAlgError as e:
        raise DecompositionFailure(f"{what} の固有値分解に失敗しました: {e}") from e
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(Q))):
        raise DecompositionFailure(f"{what} の固有値分解が有限でない値を返しました")
    # eigh は昇順なので降順に並べ直す
    return lam[::-1].copy(), Q[:, ::-1].copy()


def build_and_decompose(instance: ModelInstance, U: Optional[np.ndarray] = None) -> Decomposition:
    """
    H̃ = A^{1/2} U B U* A^{1/2} と 𝓗̃ = B^{1/2} U* A U B^{1/2} を同じ U から作って分解する。
    固有値は H = A U B U* と共通、u_k / v_k は Y = A^{1/2} U B^{1/2} の左右特異ベクトル。
    """
    if U is None:
        U = sample_haar(instance.n, instance.ensemble, instance.rng())
    a, b = instance.a_diag, instance.b_diag
    sa, sb = np.sqrt(a), np.sqrt(b)
    Uh = U.conj().T

    h_tilde = sa[:, np.newaxis] * ((U * b[np.newaxis, :]) @ Uh) * sa[np.newaxis, :]
    h_tilde = 0.5 * (h_tilde + h_tilde.conj().T)
    h_right = sb[:, np.newaxis] * ((Uh * a[np.newaxis, :]) @ U) * sb[np.newaxis, :]
    h_right = 0.5 * (h_right + h_right.conj().T)

    lam, Q = _hermitian_eigh(h_tilde, "H̃")
    lam_r, V = _hermitian_eigh(h_right, "𝓗̃")
    return Decomposition(
        instance=instance,
        eigenvalues=lam,
        left=Q,
        right_eigenvalues=lam_r,
        right=V,
        h_tilde=h_tilde,
    )
