from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class SolverConfig:
    """
    サブオーディネーション方程式ソルバの設定。
    値を変えるときは dataclasses.replace を使う。
    """

    tol: float = 1e-11
    newton_switch: float = 1e-3
    max_iter: int = 200
    support_margin: float = 1e-8

    # --- 不動点反復 ---
    damping: float = 0.5

    # --- Newton ---
    max_halvings: int = 30

    # --- η 継続 ---
    eta_high: Optional[float] = None      # None なら 10 * a_1 * b_1
    continuation_ratio: float = 0.7
    max_step_ratio: float = 10.0          # 1 ステップで η を割ってよい最大倍率
    continuation_jump: float = 0.5        # |Δω| / (1 + |ω|) の上限
    max_step_splits: int = 8
    eta_floor: float = 1e-10              # 実軸モードで η=0 の直前まで下げる値

    # --- 証明書 ---
    certify: bool = False
    certificate_samples: int = 64
    certificate_safety: float = 1.05

    # --- 並列 ---
    threads: int = 0                      # 0 = 自動
    chunk_size: int = 128

    def eta_start(self, a_hi: float, b_hi: float) -> float:
        if self.eta_high is not None:
            return float(self.eta_high)
        return 10.0 * float(a_hi) * float(b_hi)

    def n_jobs(self) -> int:
        return -1 if self.threads <= 0 else int(self.threads)


DEFAULT_CONFIG = SolverConfig()
