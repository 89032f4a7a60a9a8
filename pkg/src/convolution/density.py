from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from src.convolution.edges import find_lower_edge, find_upper_edge
from src.errors import ConfigError, EdgeBracketFailure, ScheduleError
from src.measures.spectral import SpectralMeasure
from src.storage.export import sidecar_path, write_csv, write_json
from src.subordination.config import DEFAULT_CONFIG, SolverConfig
from src.subordination.solver import PointStatus, convolution_m, solve_grid
from src.util.debuglog import get_logger

logger = get_logger(__name__)

DEFAULT_EVAL_ETA = 1e-6
DEFAULT_GRID_POINTS = 2000
CSV_HEADER = ("x", "rho", "re_m", "im_m")


@dataclass(frozen=True, eq=False)
class ConvolutionResult:
    """
    μ_A ⊠ μ_B の密度を格子上で持つ。
    収束しなかった格子点は density / stieltjes_row が NaN、status に理由が入る。
    """
    grid: np.ndarray
    density: np.ndarray
    e_minus: float
    e_plus: float
    stieltjes_row: np.ndarray
    eval_eta: float
    status: np.ndarray

    def ok(self) -> np.ndarray:
        return self.status == PointStatus.OK

    def grid_step(self) -> float:
        return float(np.max(np.diff(self.grid))) if len(self.grid) > 1 else 0.0

    def mass(self) -> float:
        # NaN（失敗点）は 0 として数える
        return float(trapezoid(np.nan_to_num(self.density), self.grid))

    def cdf(self, x: Union[float, np.ndarray]) -> np.ndarray:
        """格子上の累積台形積分を総質量で正規化したもの（線形補間）"""
        rho = np.nan_to_num(self.density)
        cum = cumulative_trapezoid(rho, self.grid, initial=0.0)
        total = cum[-1] if cum[-1] > 0.0 else 1.0
        return np.interp(np.asarray(x, dtype=float), self.grid, cum / total, left=0.0, right=1.0)

    def metadata(self) -> Dict[str, Any]:
        return {
            "e_minus": self.e_minus,
            "e_plus": self.e_plus,
            "eval_eta": self.eval_eta,
            "points": int(len(self.grid)),
            "failed_points": int(np.sum(~self.ok())),
            "mass": self.mass(),
        }


def default_grid(muA: SpectralMeasure, muB: SpectralMeasure, count: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    # supp μ_A ⊠ μ_B ⊂ [a_N b_N, a_1 b_1] に余白をつけた一様格子
    lo = 0.9 * muA.support_lo * muB.support_lo
    hi = 1.1 * muA.support_hi * muB.support_hi
    return np.linspace(lo, hi, int(count))


def _edges_from_density(grid: np.ndarray, rho: np.ndarray) -> Tuple[float, float]:
    r = np.nan_to_num(rho)
    peak = float(np.max(r)) if len(r) else 0.0
    live = np.flatnonzero(r > 1e-8 * max(peak, 1e-300))
    if live.size == 0:
        return float(grid[0]), float(grid[-1])
    return float(grid[live[0]]), float(grid[live[-1]])


def density(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    grid: Optional[np.ndarray] = None,
    eval_eta: float = DEFAULT_EVAL_ETA,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> ConvolutionResult:
    """
    ρ(x) = Im m_⊠(x + iη) / π。m_⊠ は M_⊠ = M_A(Ω_B) から戻す。
    eval_eta = 0 のときは実軸まで継続した値を使う。
    """
    xs = default_grid(muA, muB) if grid is None else np.asarray(grid, dtype=float)
    if xs.ndim != 1 or len(xs) < 2:
        raise ConfigError("grid は 2 点以上の 1 次元配列", field="grid")
    if np.any(np.diff(xs) <= 0.0):
        raise ConfigError("grid は狭義単調増加である必要があります", field="grid")
    if not (eval_eta >= 0.0):
        raise ScheduleError("eval_eta は非負", eval_eta=eval_eta)

    sol = solve_grid(muA, muB, xs, eval_eta, cfg)
    m = convolution_m(muA, sol.z, sol.omega_b)
    ok = sol.ok() & np.isfinite(m)
    m = np.where(ok, m, np.nan + 0j)
    rho = np.where(ok, np.maximum(m.imag / np.pi, 0.0), np.nan)

    try:
        e_plus = find_upper_edge(muA, muB, cfg).e_plus
        e_minus = find_lower_edge(muA, muB, cfg).e_minus
    except EdgeBracketFailure as e:
        # 端が z̃ から取れないときは密度の台から読む
        logger.warning("edge finder failed (%s); edges taken from the density support", e)
        e_minus, e_plus = _edges_from_density(xs, rho)

    status = np.where(ok, sol.status, np.maximum(sol.status, PointStatus.NO_CONVERGENCE))
    logger.debug("density: %d points, eta=%.2e, E-=%.10g, E+=%.10g", len(xs), eval_eta, e_minus, e_plus)
    return ConvolutionResult(
        grid=xs,
        density=rho,
        e_minus=float(e_minus),
        e_plus=float(e_plus),
        stieltjes_row=m,
        eval_eta=float(eval_eta),
        status=status.astype(int),
    )


def write_density_csv(
    result: ConvolutionResult,
    path: Union[str, Path],
    extra_meta: Optional[Dict[str, Any]] = None,
) -> Path:
    """x,rho,re_m,im_m の CSV と、端や η を入れた <out>.meta.json を書く"""
    rows = zip(result.grid, result.density, result.stieltjes_row.real, result.stieltjes_row.imag)
    out = write_csv(path, CSV_HEADER, rows)
    meta = result.metadata()
    if extra_meta:
        meta.update(extra_meta)
    write_json(sidecar_path(out), meta)
    return out
