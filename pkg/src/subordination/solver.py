from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from typing_extensions import Self

from src.errors import BranchJump, LeftAdmissibleRegion, NoConvergence, ScheduleError
from src.measures.spectral import SpectralMeasure, transform_arrays
from src.subordination.config import DEFAULT_CONFIG, SolverConfig
from src.subordination.kantorovich import KantorovichCertificate, certify
from src.subordination.system import (
    default_guess,
    evaluate,
    herglotz_ok,
    newton_delta,
    outside_margin,
)
from src.util.debuglog import get_logger

logger = get_logger(__name__)


class PointStatus(IntEnum):
    OK = 0
    NO_CONVERGENCE = 1
    LEFT_REGION = 2
    BRANCH_JUMP = 3


@dataclass(frozen=True)
class SubordinationSolution:
    z: complex
    omega_a: complex
    omega_b: complex
    residual: float
    iterations: int
    certificate: Optional[KantorovichCertificate] = None

    def to_record(self) -> Dict[str, Any]:
        rec: Dict[str, Any] = {
            "z": [self.z.real, self.z.imag],
            "omega_a": [self.omega_a.real, self.omega_a.imag],
            "omega_b": [self.omega_b.real, self.omega_b.imag],
            "residual": float(self.residual),
            "iterations": int(self.iterations),
        }
        if self.certificate is not None:
            rec["certificate"] = self.certificate.to_record()
        return rec

    @classmethod
    def from_record(cls, rec: Dict[str, Any]) -> Self:
        def c(v: Sequence[float]) -> complex:
            return complex(float(v[0]), float(v[1]))

        cert = None
        if "certificate" in rec:
            cr = rec["certificate"]
            cert = KantorovichCertificate(float(cr["b"]), float(cr["L"]), float(cr["t_star"]), bool(cr["passed"]))
        return cls(
            z=c(rec["z"]),
            omega_a=c(rec["omega_a"]),
            omega_b=c(rec["omega_b"]),
            residual=float(rec["residual"]),
            iterations=int(rec["iterations"]),
            certificate=cert,
        )


@dataclass
class _Batch:
    """複数の z をまとめて解くときの作業状態"""
    z: np.ndarray
    oa: np.ndarray
    ob: np.ndarray
    residual: np.ndarray = field(init=False)
    iterations: np.ndarray = field(init=False)
    status: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        n = len(self.z)
        self.residual = np.full(n, np.inf)
        self.iterations = np.zeros(n, dtype=int)
        self.status = np.zeros(n, dtype=int)

    def copy(self) -> "_Batch":
        b = _Batch(self.z.copy(), self.oa.copy(), self.ob.copy())
        b.residual = self.residual.copy()
        b.iterations = self.iterations.copy()
        b.status = self.status.copy()
        return b


@dataclass(frozen=True)
class GridSolution:
    """solve_grid の結果（格子点ごとの状態つき）"""
    z: np.ndarray
    omega_a: np.ndarray
    omega_b: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    status: np.ndarray

    def ok(self) -> np.ndarray:
        return self.status == PointStatus.OK


# -------------------
# 反復本体
# -------------------

def _fixed_point_step(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    st: _Batch,
    idx: np.ndarray,
    cfg: SolverConfig,
) -> None:
    """
    (ω_a, ω_b) <- (z L_A(ω_b), z L_B(ω_a)) を同時更新する。
    2 回続けると ω_a/z に対する F_z(w) = L_A(z L_B(z w)) の反復になる。
    Herglotz 条件を破る生ステップは damping 倍ずつ縮める。
    """
    z, oa0, ob0 = st.z[idx], st.oa[idx], st.ob[idx]
    ta = transform_arrays(muA, ob0, order=0, check=False)
    tb = transform_arrays(muB, oa0, order=0, check=False)
    with np.errstate(invalid="ignore", over="ignore"):
        oa_new = z * ta.L
        ob_new = z * tb.L

    t = np.ones(len(idx))
    done = np.zeros(len(idx), dtype=bool)
    ca, cb = oa_new.copy(), ob_new.copy()
    for _ in range(cfg.max_halvings + 1):
        ca = np.where(done, ca, oa0 + t * (oa_new - oa0))
        cb = np.where(done, cb, ob0 + t * (ob_new - ob0))
        good = herglotz_ok(muA, muB, ca, cb, z) & outside_margin(muA, muB, ca, cb, cfg.support_margin)
        done |= good
        if np.all(done):
            break
        t = np.where(done, t, t * cfg.damping)

    # 縮めても条件を満たさない点: 台の近くなら領域外、そうでなければ最後の候補を採用
    margin_ok = outside_margin(muA, muB, ca, cb, cfg.support_margin)
    st.oa[idx] = np.where(margin_ok, ca, oa0)
    st.ob[idx] = np.where(margin_ok, cb, ob0)
    st.status[idx[~margin_ok]] = PointStatus.LEFT_REGION


def _newton_step(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    st: _Batch,
    idx: np.ndarray,
    res0: np.ndarray,
    ev_sub,
    cfg: SolverConfig,
) -> np.ndarray:
    """
    バックトラッキング付き Newton。受理できなかった点の位置（idx 内マスク）を返す。
    """
    z, oa0, ob0 = st.z[idx], st.oa[idx], st.ob[idx]
    da, db = newton_delta(ev_sub, z)
    t = np.ones(len(idx))
    accepted = np.zeros(len(idx), dtype=bool)
    usable = np.isfinite(da) & np.isfinite(db)

    for _ in range(cfg.max_halvings + 1):
        pending = usable & ~accepted
        if not np.any(pending):
            break
        p = np.flatnonzero(pending)
        ca = oa0[p] + t[p] * da[p]
        cb = ob0[p] + t[p] * db[p]
        region = outside_margin(muA, muB, ca, cb, cfg.support_margin)
        region &= np.where(z[p].imag > 0.0, (ca.imag > 0.0) & (cb.imag > 0.0), True)
        r_new = np.full(len(p), np.inf)
        if np.any(region):
            q = np.flatnonzero(region)
            ev = evaluate(muA, muB, ca[q], cb[q], z[p][q])
            r_new[q] = ev.residual()
        good = region & (r_new < res0[p])
        gp = p[good]
        st.oa[idx[gp]] = ca[good]
        st.ob[idx[gp]] = cb[good]
        accepted[gp] = True
        t[p[~good]] *= 0.5
    return ~accepted


def _iterate(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    st: _Batch,
    cfg: SolverConfig,
) -> None:
    running = st.status == PointStatus.OK
    st.iterations[running] = 0
    for it in range(cfg.max_iter + 1):
        idx = np.flatnonzero(running)
        if idx.size == 0:
            return
        ev = evaluate(muA, muB, st.oa[idx], st.ob[idx], st.z[idx])
        res = ev.residual()
        st.residual[idx] = res

        conv = res <= cfg.tol
        running[idx[conv]] = False
        if it == cfg.max_iter:
            break

        live = ~conv
        st.iterations[idx[live]] += 1
        use_newton = live & (res < cfg.newton_switch)
        use_fp = live & ~use_newton

        if np.any(use_newton):
            sub = idx[use_newton]
            failed = _newton_step(muA, muB, st, sub, res[use_newton], ev.subset(use_newton), cfg)
            if np.any(failed):
                # Newton が進めない点は固定点ステップに落とす
                _fixed_point_step(muA, muB, st, sub[failed], cfg)
        if np.any(use_fp):
            _fixed_point_step(muA, muB, st, idx[use_fp], cfg)

        running &= st.status == PointStatus.OK

    left = running & (st.residual > cfg.tol)
    st.status[left] = PointStatus.NO_CONVERGENCE


# -------------------
# η 継続
# -------------------

def geometric_schedule(
    eta_start: float,
    eta_end: float,
    ratio: float = 0.7,
    floor: float = 1e-10,
) -> List[float]:
    """eta_start から比 ratio で eta_end まで。eta_end = 0 なら floor まで下げて最後に 0。"""
    eta_start, eta_end = float(eta_start), float(eta_end)
    if not (0.0 < ratio < 1.0):
        raise ScheduleError("ratio は (0, 1)", ratio=ratio)
    if eta_end < 0.0 or eta_start <= 0.0:
        raise ScheduleError("η は非負", eta_start=eta_start, eta_end=eta_end)
    target = eta_end if eta_end > 0.0 else min(floor, eta_start)
    out = [eta_start]
    while out[-1] * ratio > target:
        out.append(out[-1] * ratio)
    if out[-1] != target:
        out.append(target)
    if eta_end == 0.0:
        out.append(0.0)
    return out


def _validate_schedule(schedule: Sequence[float]) -> List[float]:
    etas = [float(e) for e in schedule]
    if not etas:
        raise ScheduleError("η スケジュールが空です")
    if any(e < 0.0 or not math.isfinite(e) for e in etas):
        raise ScheduleError("η は非負の有限値", schedule=str(etas[:5]))
    if any(e == 0.0 for e in etas[:-1]):
        raise ScheduleError("η = 0 はスケジュールの最後にだけ置ける")
    if any(b >= a for a, b in zip(etas, etas[1:])):
        raise ScheduleError("η スケジュールは狭義単調減少である必要があります")
    return etas


def _subdivide(eta_from: float, eta_to: float, cfg: SolverConfig) -> List[float]:
    # 1 ステップの縮小率が max_step_ratio を超えないように中間点を挟む
    if eta_to == 0.0:
        pts = _subdivide(eta_from, min(cfg.eta_floor, eta_from), cfg) if eta_from > cfg.eta_floor else []
        return pts + [0.0]
    if eta_from / eta_to <= cfg.max_step_ratio:
        return [eta_to]
    k = math.ceil(math.log(eta_from / eta_to) / math.log(cfg.max_step_ratio))
    q = (eta_to / eta_from) ** (1.0 / k)
    return [eta_from * q ** j for j in range(1, k)] + [eta_to]


def _jumped(prev: _Batch, cur: _Batch, cfg: SolverConfig) -> np.ndarray:
    ja = np.abs(cur.oa - prev.oa) / (1.0 + np.abs(prev.oa))
    jb = np.abs(cur.ob - prev.ob) / (1.0 + np.abs(prev.ob))
    return (np.maximum(ja, jb) > cfg.continuation_jump) & (cur.status == PointStatus.OK)


def _advance(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    E: np.ndarray,
    prev: _Batch,
    eta_from: float,
    eta_to: float,
    cfg: SolverConfig,
    depth: int = 0,
) -> _Batch:
    st = prev.copy()
    st.z = E + 1j * eta_to
    _iterate(muA, muB, st, cfg)
    jump = _jumped(prev, st, cfg)
    if not np.any(jump):
        return st
    if depth >= cfg.max_step_splits:
        st.status[jump] = PointStatus.BRANCH_JUMP
        return st
    # ステップを半分（幾何平均）にしてやり直す
    mid = math.sqrt(eta_from * eta_to) if eta_to > 0.0 else 0.5 * eta_from
    logger.debug("branch jump: split eta %.3e -> %.3e -> %.3e (depth=%d)", eta_from, mid, eta_to, depth)
    half = _advance(muA, muB, E, prev, eta_from, mid, cfg, depth + 1)
    return _advance(muA, muB, E, half, mid, eta_to, cfg, depth + 1)


def _follow(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    E: np.ndarray,
    schedule: Sequence[float],
    cfg: SolverConfig,
    guess: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> List[_Batch]:
    """schedule の各 η での状態を返す（最初の点は既定の初期値から）"""
    etas = _validate_schedule(schedule)
    z0 = E + 1j * etas[0]
    oa, ob = guess if guess is not None else default_guess(muA, muB, z0)
    st = _Batch(z0.astype(complex), np.array(oa, dtype=complex), np.array(ob, dtype=complex))
    _iterate(muA, muB, st, cfg)
    out = [st.copy()]
    for eta_from, eta_to in zip(etas, etas[1:]):
        here = eta_from
        for eta_mid in _subdivide(eta_from, eta_to, cfg):
            st = _advance(muA, muB, E, st, here, eta_mid, cfg)
            here = eta_mid
        out.append(st.copy())
        logger.debug(
            "eta=%.3e ok=%d/%d max_res=%.2e",
            eta_to,
            int(np.sum(st.status == PointStatus.OK)),
            len(E),
            float(np.max(st.residual)) if len(E) else 0.0,
        )
    return out


def _raise_for(status: int, z: complex, residual: float) -> None:
    if status == PointStatus.NO_CONVERGENCE:
        raise NoConvergence(f"z={z} で反復が収束しませんでした (residual={residual:.3e})", z=z, residual=residual)
    if status == PointStatus.LEFT_REGION:
        raise LeftAdmissibleRegion(f"z={z} で ω が台に近づきすぎました", z=z)
    if status == PointStatus.BRANCH_JUMP:
        raise BranchJump(f"z={z} で継続中に分枝が跳びました", z=z)


def _solution(st: _Batch, k: int, cert: Optional[KantorovichCertificate] = None) -> SubordinationSolution:
    _raise_for(int(st.status[k]), complex(st.z[k]), float(st.residual[k]))
    return SubordinationSolution(
        z=complex(st.z[k]),
        omega_a=complex(st.oa[k]),
        omega_b=complex(st.ob[k]),
        residual=float(st.residual[k]),
        iterations=int(st.iterations[k]),
        certificate=cert,
    )


# -------------------
# public API
# -------------------

def solve_at(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    z: complex,
    guess: Optional[Tuple[complex, complex]] = None,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> SubordinationSolution:
    """
    1 点 z での (Ω_A(z), Ω_B(z))。
    guess なしで η が eta_high より小さいときは、高い η から継続して初期値を作る。
    """
    z = complex(z)
    if z == 0:
        raise ScheduleError("z = 0 では方程式が定義されません")
    eta_high = cfg.eta_start(muA.support_hi, muB.support_hi)

    if guess is None and z.imag < eta_high:
        path = _follow(muA, muB, np.array([z.real]), geometric_schedule(eta_high, z.imag, cfg.continuation_ratio, cfg.eta_floor)[:-1], cfg)
        seed_state = path[-1]
        _raise_for(int(seed_state.status[0]), complex(seed_state.z[0]), float(seed_state.residual[0]))
        x0 = (complex(seed_state.oa[0]), complex(seed_state.ob[0]))
    elif guess is None:
        ga, gb = default_guess(muA, muB, np.array([z]))
        x0 = (complex(ga[0]), complex(gb[0]))
    else:
        x0 = (complex(guess[0]), complex(guess[1]))

    cert = certify(muA, muB, z, x0, cfg) if cfg.certify else None
    st = _Batch(np.array([z]), np.array([x0[0]]), np.array([x0[1]]))
    _iterate(muA, muB, st, cfg)
    return _solution(st, 0, cert)


def solve_path(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    E: float,
    eta_schedule: Sequence[float],
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> List[SubordinationSolution]:
    """
    実部 E を固定して η を下げながら解く。各解が次の初期値になる。
    最後の η が 0 なら実軸上の値（連続拡張）まで磨く。
    """
    etas = _validate_schedule(eta_schedule)
    eta_high = cfg.eta_start(muA.support_hi, muB.support_hi)
    if etas[0] < eta_high:
        logger.debug("solve_path: schedule starts at %.3e below eta_high=%.3e", etas[0], eta_high)
    states = _follow(muA, muB, np.array([float(E)]), etas, cfg)
    return [_solution(st, 0) for st in states]


def solve_real(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    x: float,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> SubordinationSolution:
    eta_high = cfg.eta_start(muA.support_hi, muB.support_hi)
    sched = geometric_schedule(eta_high, 0.0, cfg.continuation_ratio, cfg.eta_floor)
    return solve_path(muA, muB, x, sched, cfg)[-1]


def _grid_chunk(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    xs: np.ndarray,
    schedule: List[float],
    cfg: SolverConfig,
) -> _Batch:
    return _follow(muA, muB, xs, schedule, cfg)[-1]


def solve_grid(
    muA: SpectralMeasure,
    muB: SpectralMeasure,
    xs: Sequence[float],
    eta: float,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> GridSolution:
    """
    実部の格子 xs 上で η まで継続して解く。失敗は例外にせず status に残す。
    チャンクはスレッドで並列に解き、格子順に結合する。
    """
    xs = np.asarray(xs, dtype=float)
    eta_high = cfg.eta_start(muA.support_hi, muB.support_hi)
    schedule = geometric_schedule(eta_high, float(eta), cfg.continuation_ratio, cfg.eta_floor)
    chunks = [xs[i:i + cfg.chunk_size] for i in range(0, len(xs), cfg.chunk_size)]
    parts = Parallel(n_jobs=cfg.n_jobs(), prefer="threads")(
        delayed(_grid_chunk)(muA, muB, c, schedule, cfg) for c in chunks
    )
    sol = GridSolution(
        z=np.concatenate([p.z for p in parts]) if parts else np.zeros(0, dtype=complex),
        omega_a=np.concatenate([p.oa for p in parts]) if parts else np.zeros(0, dtype=complex),
        omega_b=np.concatenate([p.ob for p in parts]) if parts else np.zeros(0, dtype=complex),
        residual=np.concatenate([p.residual for p in parts]) if parts else np.zeros(0),
        iterations=np.concatenate([p.iterations for p in parts]) if parts else np.zeros(0, dtype=int),
        status=np.concatenate([p.status for p in parts]) if parts else np.zeros(0, dtype=int),
    )
    bad = int(np.sum(sol.status != PointStatus.OK))
    if bad:
        logger.info("solve_grid: %d / %d points failed (eta=%.2e)", bad, len(xs), eta)
    return sol


def convolution_m(muA: SpectralMeasure, z: np.ndarray, omega_b: np.ndarray) -> np.ndarray:
    """M_⊠(z) = M_A(Ω_B(z)) から m_⊠ = M / (z (1 - M)) を戻す"""
    M = transform_arrays(muA, np.asarray(omega_b, dtype=complex), order=0, check=False).M
    with np.errstate(divide="ignore", invalid="ignore"):
        return M / (z * (1.0 - M))


def convolution_stieltjes(muA: SpectralMeasure, sol: SubordinationSolution) -> complex:
    return complex(convolution_m(muA, np.array([sol.z]), np.array([sol.omega_b]))[0])
