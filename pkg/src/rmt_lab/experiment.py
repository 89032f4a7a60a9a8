from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.convolution.density import ConvolutionResult, density
from src.convolution.quantiles import QuantileTable, quantiles
from src.errors import ConfigError
from src.measures.spectral import SpectralMeasure
from src.rmt_lab.checks import (
    DEFAULT_FRACTION,
    LocalLawResult,
    delocalization_statistic,
    global_law_distance,
    local_law_check,
    rigidity_ratios,
)
from src.rmt_lab.estimators import estimate_spike_counts, estimate_spikes
from src.rmt_lab.haar import Ensemble
from src.rmt_lab.instance import ModelInstance, build_and_decompose, instance_from_measures
from src.spiked.model import Side, SpikedModel, SpikeLabel
from src.spiked.overlaps import predict_overlaps
from src.spiked.predict import classify, predict_outliers
from src.subordination.config import DEFAULT_CONFIG, SolverConfig
from src.subordination.solver import SubordinationSolution, solve_at
from src.util.debuglog import get_logger

logger = get_logger(__name__)

# 受け入れ判定の倍率（≺ の N^ε を 10·log n で置き換えた運用上の値）
POLYLOG_FACTOR = 10.0
KS_LIMIT = 0.03


def _jobs(threads: int, trials: int) -> int:
    return int(threads) if int(threads) > 0 else max(1, min(int(trials), 4))


def _check_trials(trials: int) -> int:
    if int(trials) < 1:
        raise ConfigError("trials は 1 以上", field="trials")
    return int(trials)


# -------------------
# simulate
# -------------------

@dataclass(frozen=True, eq=False)
class TrialStats:
    trial: int
    eigenvalues: np.ndarray
    overlaps: Dict[str, float]
    local_law: List[LocalLawResult]
    rigidity: Optional[np.ndarray]
    deloc: float
    ks: float
    seconds: float


@dataclass(frozen=True, eq=False)
class SimulationReport:
    trials: int
    seed: int
    n: int
    ensemble: Ensemble
    eigenvalue_rows: List[np.ndarray]
    top_vector_overlaps: List[Dict[str, float]]
    local_law_errors: List[List[LocalLawResult]]
    rigidity_ratios: List[np.ndarray]
    deloc_max: List[float]
    ks_distances: List[float]
    timing: float = field(default=0.0, compare=False)

    def rigidity_max(self) -> List[float]:
        return [float(np.max(r)) for r in self.rigidity_ratios]

    def pooled_eigenvalues(self) -> np.ndarray:
        return np.concatenate(self.eigenvalue_rows) if self.eigenvalue_rows else np.zeros(0)

    def to_record(self, include_timing: bool = False) -> Dict[str, Any]:
        """同じ seed なら同じ JSON になる（所要時間は既定で外す）"""
        rec: Dict[str, Any] = {
            "trials": self.trials,
            "seed": self.seed,
            "n": self.n,
            "ensemble": self.ensemble.value,
            "eigenvalue_rows": [row.tolist() for row in self.eigenvalue_rows],
            "top_vector_overlaps": self.top_vector_overlaps,
            "local_law_errors": [[x.to_record() for x in row] for row in self.local_law_errors],
            "rigidity_max": self.rigidity_max(),
            "deloc_max": self.deloc_max,
            "ks_distances": self.ks_distances,
        }
        if include_timing:
            rec["timing"] = self.timing
        return rec


def _simulate_trial(
    inst: ModelInstance,
    solutions: Sequence[SubordinationSolution],
    table: Optional[QuantileTable],
    result: Optional[ConvolutionResult],
    pairs: Sequence[Tuple[int, int]],
    fraction: float,
    exclude: int,
) -> TrialStats:
    # 行列はここで捨て、統計量だけ返す
    t0 = time.perf_counter()
    d = build_and_decompose(inst)
    overlaps = {f"{k},{i}": float(abs(d.left[i - 1, k - 1]) ** 2) for k, i in pairs}
    stats = TrialStats(
        trial=inst.trial,
        eigenvalues=d.eigenvalues,
        overlaps=overlaps,
        local_law=local_law_check(d, solutions) if solutions else [],
        rigidity=rigidity_ratios(d.eigenvalues, table, fraction) if table is not None else None,
        deloc=delocalization_statistic(d, fraction, exclude),
        ks=global_law_distance(d.eigenvalues, result) if result is not None else math.nan,
        seconds=time.perf_counter() - t0,
    )
    logger.debug("trial %d: lambda_1=%.10g (%.2fs)", inst.trial, stats.eigenvalues[0], stats.seconds)
    return stats


def simulate(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    n: int,
    trials: int,
    seed: int = 0,
    ensemble: Ensemble = Ensemble.UNITARY,
    threads: int = 0,
    z_list: Sequence[complex] = (),
    overlap_pairs: Sequence[Tuple[int, int]] = ((1, 1),),
    table: Optional[QuantileTable] = None,
    result: Optional[ConvolutionResult] = None,
    model: Optional[SpikedModel] = None,
    fraction: float = DEFAULT_FRACTION,
    exclude: int = 0,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> SimulationReport:
    """
    trials 回の標本を作って固有値・ベクトル成分・局所則・剛性・非局在を集める。
    試行ごとの乱数は (seed, trial) から作り、結果は試行番号順に並べる。
    overlap_pairs の (k, i) は |u_k(i)|²（1 始まり）。
    """
    trials = _check_trials(trials)
    base = instance_from_measures(muA, muB, n, ensemble, seed, model)
    for k, i in overlap_pairs:
        if not (1 <= k <= base.n and 1 <= i <= base.n):
            raise ConfigError(f"overlap pair ({k},{i}) が範囲外です", field="overlap_pairs")
    solutions = [solve_at(muA, muB, z, cfg=cfg) for z in z_list]

    t0 = time.perf_counter()
    rows: List[TrialStats] = Parallel(n_jobs=_jobs(threads, trials), prefer="threads")(
        delayed(_simulate_trial)(base.with_trial(t), solutions, table, result, overlap_pairs, fraction, exclude)
        for t in range(trials)
    )
    elapsed = time.perf_counter() - t0
    logger.info("simulate: n=%d trials=%d seed=%d done in %.2fs", base.n, trials, seed, elapsed)
    return SimulationReport(
        trials=trials,
        seed=int(seed),
        n=base.n,
        ensemble=Ensemble(ensemble),
        eigenvalue_rows=[r.eigenvalues for r in rows],
        top_vector_overlaps=[r.overlaps for r in rows],
        local_law_errors=[r.local_law for r in rows],
        rigidity_ratios=[r.rigidity for r in rows if r.rigidity is not None],
        deloc_max=[r.deloc for r in rows],
        ks_distances=[r.ks for r in rows],
        timing=elapsed,
    )


# -------------------
# verify
# -------------------

@dataclass(frozen=True, eq=False)
class VerifyReport:
    simulation: SimulationReport
    e_minus: float
    e_plus: float
    z: complex
    metrics: Dict[str, float]
    limits: Dict[str, float]

    def passed(self) -> Dict[str, bool]:
        return {k: bool(self.metrics[k] <= self.limits[k]) for k in self.limits}

    def all_passed(self) -> bool:
        return all(self.passed().values())

    def to_record(self, include_timing: bool = False) -> Dict[str, Any]:
        return {
            "e_minus": self.e_minus,
            "e_plus": self.e_plus,
            "z": [self.z.real, self.z.imag],
            "metrics": self.metrics,
            "limits": self.limits,
            "passed": self.passed(),
            "simulation": self.simulation.to_record(include_timing),
        }


def verify(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    n: int,
    trials: int,
    seed: int = 0,
    ensemble: Ensemble = Ensemble.UNITARY,
    threads: int = 0,
    grid: Optional[np.ndarray] = None,
    fraction: float = DEFAULT_FRACTION,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> VerifyReport:
    """
    理論側（密度・端・分位点・Ω）を計算してからモンテカルロと突き合わせる。
    局所則は z = E₊ + i n^{-1/3} で見る。判定の上限は 10·log n を基準にした運用値。
    """
    result = density(muA, muB, grid=grid, cfg=cfg)
    table = quantiles(result, n)
    eta = n ** (-1.0 / 3.0)
    z = complex(result.e_plus, eta)
    sim = simulate(
        muA, muB, n, trials, seed, ensemble, threads,
        z_list=[z], table=table, result=result, fraction=fraction, cfg=cfg,
    )

    polylog = POLYLOG_FACTOR * math.log(n)
    lam1 = np.array([row[0] for row in sim.eigenvalue_rows])
    metrics = {
        "edge_mean_gap": float(abs(np.mean(lam1) - result.e_plus)),
        "ks_median": float(np.median(sim.ks_distances)),
        "ks_pooled": global_law_distance(sim.pooled_eigenvalues(), result),
        "local_law_averaged_median": float(np.median([row[0].averaged_dev for row in sim.local_law_errors])),
        "local_law_offdiag_median": float(np.median([row[0].offdiag_max for row in sim.local_law_errors])),
        "rigidity_median": float(np.median(sim.rigidity_max())),
        "deloc_median": float(np.median(sim.deloc_max)),
    }
    limits = {
        "edge_mean_gap": POLYLOG_FACTOR * n ** (-2.0 / 3.0) * math.log(n),
        "ks_pooled": KS_LIMIT,
        "local_law_averaged_median": POLYLOG_FACTOR / (n * eta),
        "local_law_offdiag_median": POLYLOG_FACTOR / math.sqrt(n * eta),
        "rigidity_median": polylog,
        "deloc_median": polylog,
    }
    rep = VerifyReport(simulation=sim, e_minus=result.e_minus, e_plus=result.e_plus, z=z, metrics=metrics, limits=limits)
    failed = [k for k, ok in rep.passed().items() if not ok]
    if failed:
        logger.warning("verify: checks over the limit: %s", failed)
    return rep


# -------------------
# outlier experiment
# -------------------

@dataclass(frozen=True, eq=False)
class OutlierTrial:
    trial: int
    top_eigenvalues: List[float]
    normalized_deviation: Dict[str, float]
    overlaps: Dict[str, float]
    estimates: Dict[str, float]
    reliable: Dict[str, bool]
    counts: Optional[Tuple[int, int]]

    def to_record(self) -> Dict[str, Any]:
        return {
            "trial": self.trial,
            "top_eigenvalues": self.top_eigenvalues,
            "normalized_deviation": self.normalized_deviation,
            "overlaps": self.overlaps,
            "estimates": self.estimates,
            "reliable": self.reliable,
            "counts": list(self.counts) if self.counts is not None else None,
        }


@dataclass(frozen=True, eq=False)
class OutlierExperimentReport:
    trials: List[OutlierTrial]
    predictions: List[Dict[str, Any]]
    predicted_overlap: Dict[str, float]
    hats: Dict[str, float]
    e_plus: float
    seed: int
    n: int
    timing: float = 0.0

    def _median(self, pick) -> Dict[str, float]:
        keys = sorted({k for t in self.trials for k in pick(t)})
        return {k: float(np.median([pick(t)[k] for t in self.trials if k in pick(t)])) for k in keys}

    def median_abs_deviation(self) -> Dict[str, float]:
        """|λ̂_π − 予測位置| / ゆらぎ の中央値"""
        return self._median(lambda t: {k: abs(v) for k, v in t.normalized_deviation.items()})

    def median_overlap_error(self) -> Dict[str, float]:
        return self._median(lambda t: {k: abs(v - self.predicted_overlap[k]) for k, v in t.overlaps.items() if k in self.predicted_overlap})

    def median_estimate_error(self) -> Dict[str, float]:
        return self._median(lambda t: {k: abs(v - self.hats[k]) for k, v in t.estimates.items()})

    def count_success(self, r: int, s: int) -> float:
        got = [t.counts for t in self.trials if t.counts is not None]
        return float(np.mean([c == (r, s) for c in got])) if got else math.nan

    def to_record(self, include_timing: bool = False) -> Dict[str, Any]:
        rec: Dict[str, Any] = {
            "seed": self.seed,
            "n": self.n,
            "e_plus": self.e_plus,
            "predictions": self.predictions,
            "predicted_overlap": self.predicted_overlap,
            "hats": self.hats,
            "median_abs_deviation": self.median_abs_deviation(),
            "median_overlap_error": self.median_overlap_error(),
            "median_estimate_error": self.median_estimate_error(),
            "trials": [t.to_record() for t in self.trials],
        }
        if include_timing:
            rec["timing"] = self.timing
        return rec


def _outlier_trial(
    inst: ModelInstance,
    model: SpikedModel,
    predictions: Sequence[Any],
    supercritical: Sequence[SpikeLabel],
    pi: Dict[SpikeLabel, int],
    omega: Optional[float],
    run_estimators: bool,
    fraction: float,
) -> OutlierTrial:
    d = build_and_decompose(inst)
    lam = d.eigenvalues
    top = model.r + model.s

    deviation = {str(p.label): float((lam[p.pi_index - 1] - p.location) / p.fluctuation) for p in predictions}
    overlaps: Dict[str, float] = {}
    for lab in supercritical:
        k = pi[lab] - 1
        if lab.side == Side.A:
            overlaps[str(lab)] = float(abs(d.left[inst.a_spike_pos[lab.index - 1], k]) ** 2)
        else:
            overlaps[str(lab)] = float(abs(d.right[inst.b_spike_pos[lab.index - 1], k]) ** 2)

    estimates: Dict[str, float] = {}
    reliable: Dict[str, bool] = {}
    if run_estimators and supercritical:
        a_labs = [lab for lab in supercritical if lab.side == Side.A]
        b_labs = [lab for lab in supercritical if lab.side == Side.B]
        est = estimate_spikes(
            lam, d.left, d.right, model.a_diag, model.b_diag,
            [pi[x] for x in a_labs], [pi[x] for x in b_labs], model.e_plus,
            right_eigenvalues=d.right_eigenvalues, force=True, skip=top,
        )
        for lab, v, ok in zip(a_labs, est.a_hat, est.a_reliable):
            estimates[str(lab)], reliable[str(lab)] = float(v), bool(ok)
        for lab, v, ok in zip(b_labs, est.b_hat, est.b_reliable):
            estimates[str(lab)], reliable[str(lab)] = float(v), bool(ok)

    counts = estimate_spike_counts(d.left, d.right, omega, fraction) if omega is not None else None
    return OutlierTrial(
        trial=inst.trial,
        top_eigenvalues=[float(x) for x in lam[: max(top, 1)]],
        normalized_deviation=deviation,
        overlaps=overlaps,
        estimates=estimates,
        reliable=reliable,
        counts=counts,
    )


def outlier_experiment(
    model: SpikedModel,
    trials: int,
    seed: int = 0,
    ensemble: Ensemble = Ensemble.UNITARY,
    threads: int = 0,
    omega: Optional[float] = None,
    run_estimators: bool = True,
    fraction: float = DEFAULT_FRACTION,
) -> OutlierExperimentReport:
    """
    スパイク模型の標本を回し、π の順に λ̂ と予測位置を対応させる。
    ずれは予測ゆらぎで割り、重なりはスパイク方向 e_i への射影 |⟨û_π, e_i⟩|² を測る。
    omega を渡すとスパイク数の推定も行う。
    """
    trials = _check_trials(trials)
    cls = classify(model)
    predictions = predict_outliers(model, cls)
    if not cls.supercritical:
        logger.info("outlier_experiment: no supercritical spike; running as a bulk control")
    predicted_overlap = {
        str(lab): predict_overlaps(model, [lab], classification=cls).g(lab) for lab in cls.supercritical
    }
    hats = {str(lab): model.hat(lab) for lab in model.labels()}
    base = instance_from_measures(model.muA, model.muB, model.n, ensemble, seed, model)

    t0 = time.perf_counter()
    rows: List[OutlierTrial] = Parallel(n_jobs=_jobs(threads, trials), prefer="threads")(
        delayed(_outlier_trial)(base.with_trial(t), model, predictions, cls.supercritical, cls.pi, omega, run_estimators, fraction)
        for t in range(trials)
    )
    elapsed = time.perf_counter() - t0
    logger.info("outlier_experiment: n=%d trials=%d done in %.2fs", model.n, trials, elapsed)
    return OutlierExperimentReport(
        trials=rows,
        predictions=[p.to_record() for p in predictions],
        predicted_overlap=predicted_overlap,
        hats=hats,
        e_plus=model.e_plus,
        seed=int(seed),
        n=model.n,
        timing=elapsed,
    )
