from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from typing_extensions import Self

from src.errors import InvalidMeasure, MTransformPole, NonPositiveSample, SupportCollision

# atom マージの相対距離
MERGE_RTOL = 1e-12
# 実軸上で台に接触とみなす距離
COLLISION_TOL = 1e-14
# |1 + z m| がこれ以下なら M の極
POLE_TOL = 1e-13

ATOMIC_MASS_TOL = 1e-12
DENSITY_MASS_TOL = 1e-8

# (m, K) の一時配列が大きくなりすぎないように
_CHUNK = 512


class MeasureKind(str, Enum):
    ATOMIC = "atomic"
    DENSITY = "density"


@dataclass(frozen=True)
class TransformValue:
    m: complex
    M: complex
    L: complex
    L1: complex
    L2: complex


@dataclass(frozen=True)
class TransformArrays:
    """transform の配列版（ソルバ内部用）。order に応じて L1, L2 は None。"""
    m: np.ndarray
    M: np.ndarray
    L: np.ndarray
    L1: Optional[np.ndarray] = None
    L2: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """
    (0, ∞) 上のコンパクト台の確率測度。

    ATOMIC:  locations = atom 位置（降順）, weights = 重み
    DENSITY: locations = grid（昇順）, weights = 密度値
             密度は grid 上の折れ線補間として扱う（質量 = 台形和）
    """

    kind: MeasureKind
    locations: np.ndarray
    weights: np.ndarray
    support_lo: float
    support_hi: float

    # -------------------
    # constructors
    # -------------------

    @classmethod
    def atomic(cls, atoms: Iterable[Tuple[float, float]]) -> Self:
        pairs = [(float(x), float(w)) for x, w in atoms]
        if not pairs:
            raise InvalidMeasure("atom が空です")
        xs = np.array([p[0] for p in pairs], dtype=float)
        ws = np.array([p[1] for p in pairs], dtype=float)
        if not np.all(np.isfinite(xs)) or np.any(xs <= 0.0):
            raise InvalidMeasure("atom の位置は正の有限値である必要があります")
        if not np.all(np.isfinite(ws)) or np.any(ws <= 0.0):
            raise InvalidMeasure("atom の重みは正である必要があります")
        total = float(ws.sum())
        if abs(total - 1.0) > ATOMIC_MASS_TOL * max(1, len(ws)):
            raise InvalidMeasure(f"重みの合計が 1 ではありません: {total!r}", total=total)

        order = np.argsort(-xs, kind="stable")
        xs, ws = xs[order], ws[order]

        # 近すぎる atom はまとめる（極の打ち消し誤差を避ける）
        mx: List[float] = [float(xs[0])]
        mw: List[float] = [float(ws[0])]
        for x, w in zip(xs[1:], ws[1:]):
            if abs(mx[-1] - x) <= MERGE_RTOL * max(abs(mx[-1]), abs(x)):
                mw[-1] += float(w)
            else:
                mx.append(float(x))
                mw.append(float(w))

        loc = np.array(mx, dtype=float)
        wts = np.array(mw, dtype=float)
        return cls._frozen(MeasureKind.ATOMIC, loc, wts, float(loc[-1]), float(loc[0]))

    @classmethod
    def point_mass(cls, a: float) -> Self:
        return cls.atomic([(float(a), 1.0)])

    @classmethod
    def density(cls, grid: Sequence[float], values: Sequence[float]) -> Self:
        g = np.asarray(grid, dtype=float)
        v = np.asarray(values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise InvalidMeasure("grid と values は同じ長さ(>=2)の1次元列である必要があります")
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(v)):
            raise InvalidMeasure("grid / values に有限でない値があります")
        if g[0] <= 0.0:
            raise InvalidMeasure("台は正の半直線内にある必要があります", support_lo=float(g[0]))
        if np.any(np.diff(g) <= 0.0):
            raise InvalidMeasure("grid は狭義単調増加である必要があります")
        if np.any(v < 0.0):
            raise InvalidMeasure("密度は非負である必要があります")
        mass = float(trapezoid(v, g))
        if abs(mass - 1.0) > DENSITY_MASS_TOL:
            raise InvalidMeasure(f"密度の台形積分が 1 ではありません: {mass!r}", mass=mass)
        return cls._frozen(MeasureKind.DENSITY, g.copy(), v.copy(), float(g[0]), float(g[-1]))

    @classmethod
    def _frozen(cls, kind: MeasureKind, loc: np.ndarray, wts: np.ndarray, lo: float, hi: float) -> Self:
        loc.setflags(write=False)
        wts.setflags(write=False)
        return cls(kind=kind, locations=loc, weights=wts, support_lo=lo, support_hi=hi)

    # -------------------
    # basic properties
    # -------------------

    @property
    def is_atomic(self) -> bool:
        return self.kind == MeasureKind.ATOMIC

    @property
    def atoms(self) -> List[Tuple[float, float]]:
        if not self.is_atomic:
            return []
        return [(float(x), float(w)) for x, w in zip(self.locations, self.weights)]

    def mean(self) -> float:
        if self.is_atomic:
            return float(np.dot(self.locations, self.weights))
        t0, t1 = self.locations[:-1], self.locations[1:]
        r0, r1 = self.weights[:-1], self.weights[1:]
        h = t1 - t0
        return float(np.sum(h / 6.0 * (r0 * (2.0 * t0 + t1) + r1 * (t0 + 2.0 * t1))))

    def dilate(self, c: float) -> Self:
        c = float(c)
        if c <= 0.0:
            raise InvalidMeasure("dilation の係数は正である必要があります", c=c)
        if self.is_atomic:
            return type(self).atomic(zip(self.locations * c, self.weights))
        return type(self).density(self.locations * c, self.weights / c)

    def normalize_mean(self) -> Self:
        """平均 1 に揃える（暗黙には呼ばない）"""
        return self.dilate(1.0 / self.mean())

    def cdf(self, x: Union[float, np.ndarray]) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if self.is_atomic:
            # locations は降順なので昇順に並べ直して累積
            loc = self.locations[::-1]
            cum = np.cumsum(self.weights[::-1])
            idx = np.searchsorted(loc, xs, side="right")
            out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
            return np.minimum(out, 1.0)

        g, v = self.locations, self.weights
        node_cum = np.concatenate([[0.0], np.cumsum(np.diff(g) * (v[:-1] + v[1:]) / 2.0)])
        idx = np.clip(np.searchsorted(g, xs, side="right") - 1, 0, len(g) - 2)
        beta = (v[idx + 1] - v[idx]) / (g[idx + 1] - g[idx])
        d = np.clip(xs - g[idx], 0.0, g[idx + 1] - g[idx])
        out = node_cum[idx] + v[idx] * d + 0.5 * beta * d * d
        out = np.where(xs < g[0], 0.0, out)
        out = np.where(xs >= g[-1], node_cum[-1], out)
        return np.clip(out, 0.0, 1.0)

    def breakpoints(self) -> np.ndarray:
        return np.sort(self.locations)

    def quantile_values(self, n: int) -> np.ndarray:
        """
        n 次元行列の対角 a_1 >= ... >= a_n（ESD が μ を近似する並び）。
        a_i = inf{x : F(x) >= 1 - (i - 1/2)/n}
        """
        n = int(n)
        if n < 1:
            raise InvalidMeasure("n は 1 以上", n=n)
        p = 1.0 - (np.arange(1, n + 1) - 0.5) / n
        if self.is_atomic:
            loc = self.locations[::-1]
            cum = np.cumsum(self.weights[::-1])
            idx = np.searchsorted(cum, p - 1e-15, side="left")
            idx = np.minimum(idx, len(loc) - 1)
            return loc[idx].astype(float)
        g = self.locations
        node_cdf = self.cdf(g)
        # 平坦部（密度0）があっても np.interp は左端側を返す
        return np.interp(p, node_cdf, g).astype(float)

    def distance_to_support(self, w: Union[complex, np.ndarray]) -> np.ndarray:
        ws = np.atleast_1d(np.asarray(w, dtype=complex))
        re, im = ws.real, np.abs(ws.imag)
        if self.is_atomic:
            loc = self.locations[::-1]
            j = np.clip(np.searchsorted(loc, re), 0, len(loc) - 1)
            jl = np.maximum(j - 1, 0)
            dx = np.minimum(np.abs(loc[j] - re), np.abs(loc[jl] - re))
            return np.hypot(dx, im)
        dx = np.maximum(np.maximum(self.support_lo - re, re - self.support_hi), 0.0)
        return np.hypot(dx, im)

    # -------------------
    # resolvent moments
    # -------------------

    def resolvent_moments(self, w: Union[complex, np.ndarray], kmax: int = 3) -> np.ndarray:
        """
        s_k(w) = ∫ (x - w)^{-k} dμ(x),  k = 1..kmax  → shape (kmax, len(w))

        ATOMIC は有限和。DENSITY はセルごとに折れ線密度を厳密積分する。
        """
        ws = np.atleast_1d(np.asarray(w, dtype=complex))
        out = np.empty((kmax, len(ws)), dtype=complex)
        for start in range(0, len(ws), _CHUNK):
            sl = slice(start, start + _CHUNK)
            if self.is_atomic:
                out[:, sl] = self._atomic_moments(ws[sl], kmax)
            else:
                out[:, sl] = self._density_moments(ws[sl], kmax)
        return out

    def _atomic_moments(self, w: np.ndarray, kmax: int) -> np.ndarray:
        inv = 1.0 / (self.locations[None, :] - w[:, None])
        res = np.empty((kmax, len(w)), dtype=complex)
        p = np.ones_like(inv)
        for k in range(kmax):
            p = p * inv
            res[k] = p @ self.weights
        return res

    def _density_moments(self, w: np.ndarray, kmax: int) -> np.ndarray:
        # ρ(t) = r0 + β (t - t0) をセルごとに厳密積分。u = t - w, x = h/u0
        if kmax > 3:
            raise ValueError("kmax <= 3 のみ対応")
        g, v = self.locations, self.weights
        t0, r0 = g[:-1][None, :], v[:-1][None, :]
        h = np.diff(g)[None, :]
        beta = (np.diff(v) / np.diff(g))[None, :]

        u0 = t0 - w[:, None]
        u1 = u0 + h
        x = h / u0
        lg = np.log1p(x)
        small = np.abs(x) < 0.1

        res = np.empty((kmax, len(w)), dtype=complex)
        # x - log(1+x)
        tail1 = np.where(small, _series_tail(x, small, 1), x - lg)
        res[0] = np.sum(r0 * lg + beta * u0 * tail1, axis=1)
        if kmax >= 2:
            # log(1+x) - x/(1+x)
            tail2 = np.where(small, _series_tail(x, small, 2), lg - x / (1.0 + x))
            res[1] = np.sum(r0 * h / (u0 * u1) + beta * tail2, axis=1)
        if kmax >= 3:
            res[2] = np.sum(
                r0 * h * (u0 + u1) / (2.0 * u0 * u0 * u1 * u1) + beta * h * h / (2.0 * u0 * u1 * u1),
                axis=1,
            )
        return res

    # -------------------
    # JSON
    # -------------------

    def to_json(self) -> Dict[str, Any]:
        if self.is_atomic:
            return {"kind": "atomic", "atoms": [[x, w] for x, w in self.atoms]}
        return {
            "kind": "density",
            "grid": [float(x) for x in self.locations],
            "values": [float(y) for y in self.weights],
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> Self:
        if not isinstance(data, dict) or "kind" not in data:
            raise InvalidMeasure("測度 JSON に kind がありません")
        kind = data["kind"]
        try:
            if kind == "atomic":
                return cls.atomic((float(p[0]), float(p[1])) for p in data["atoms"])
            if kind == "density":
                return cls.density(data["grid"], data["values"])
        except (KeyError, TypeError, IndexError) as e:
            raise InvalidMeasure(f"測度 JSON の形式が不正です: {e}") from e
        raise InvalidMeasure(f"未知の kind: {kind!r}")


# -------------------
# transforms
# -------------------

def _check_argument(mu: SpectralMeasure, w: np.ndarray) -> None:
    dist = mu.distance_to_support(w)
    if mu.is_atomic:
        bad = dist <= COLLISION_TOL * np.maximum(1.0, np.abs(w))
    else:
        bad = (w.imag == 0.0) & (dist <= COLLISION_TOL * np.maximum(1.0, np.abs(w)))
    if np.any(bad):
        z = complex(w[np.argmax(bad)])
        raise SupportCollision(f"引数 {z} が測度の台に接触しています", z=z)


def transform_arrays(
    mu: SpectralMeasure,
    w: Union[complex, np.ndarray],
    order: int = 2,
    check: bool = True,
) -> TransformArrays:
    """
    m, M, L と L の1階・2階導関数をまとめて評価する。
    導関数はモーメント積分 s_k = ∫(x-w)^{-k}dμ と
    ∫ x/(x-w)^k dμ = s_{k-1} + w s_k から代数的に組み立てる。
    check=False のときは極・接触を検査せず nan/inf をそのまま返す。
    """
    ws = np.atleast_1d(np.asarray(w, dtype=complex))
    if check:
        _check_argument(mu, ws)
    s = mu.resolvent_moments(ws, kmax=order + 1)
    m = s[0]
    i1 = 1.0 + ws * m
    if check and np.any(np.abs(i1) <= POLE_TOL):
        z = complex(ws[np.argmax(np.abs(i1) <= POLE_TOL)])
        raise MTransformPole(f"1 + z m(z) が 0 に近すぎます (z={z})", z=z)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        M = ws * m / i1
        L = M / ws
        L1 = L2 = None
        if order >= 1:
            p1 = s[0] + ws * s[1]
            L1 = (s[1] * i1 - m * p1) / (i1 * i1)
            if order >= 2:
                p2 = s[1] + ws * s[2]
                L2 = 2.0 * (s[2] * i1 - m * p2) / (i1 * i1) - 2.0 * L1 * p1 / i1
    return TransformArrays(m=m, M=M, L=L, L1=L1, L2=L2)


def stieltjes(mu: SpectralMeasure, z: complex) -> complex:
    z = complex(z)
    w = np.array([z])
    _check_argument(mu, w)
    return complex(mu.resolvent_moments(w, kmax=1)[0, 0])


def transforms(mu: SpectralMeasure, z: complex) -> TransformValue:
    z = complex(z)
    arr = transform_arrays(mu, np.array([z]), order=2, check=True)
    m = complex(arr.m[0])
    # M, L はスカラーの複素演算でそのまま組み立てる
    M = z * m / (1 + z * m)
    L = M / z
    return TransformValue(m=m, M=M, L=L, L1=complex(arr.L1[0]), L2=complex(arr.L2[0]))


def m_transform(mu: SpectralMeasure, z: complex) -> complex:
    return transforms(mu, z).M


def empirical_from_samples(values: Iterable[float]) -> SpectralMeasure:
    xs = [float(v) for v in values]
    if not xs:
        raise NonPositiveSample("サンプルが空です")
    bad = [x for x in xs if not (x > 0.0) or not np.isfinite(x)]
    if bad:
        raise NonPositiveSample(f"正でないサンプルがあります: {bad[0]!r}", value=bad[0])
    w = 1.0 / len(xs)
    return SpectralMeasure.atomic((x, w) for x in xs)


# -------------------
# gridded factories
# -------------------

def _normalized_density(grid: np.ndarray, values: np.ndarray) -> SpectralMeasure:
    mass = float(trapezoid(values, grid))
    return SpectralMeasure.density(grid, values / mass)


def semicircle_density(center: float, radius: float, points: int = 2001) -> SpectralMeasure:
    """中心 center・半径 radius の半円型密度（端で平方根的に消える）"""
    center, radius = float(center), float(radius)
    if radius <= 0.0 or center - radius <= 0.0:
        raise InvalidMeasure("半円の台は (0, ∞) に収まる必要があります", center=center, radius=radius)
    g = np.linspace(center - radius, center + radius, int(points))
    v = np.sqrt(np.clip(radius * radius - (g - center) ** 2, 0.0, None))
    return _normalized_density(g, v)


def marchenko_pastur_density(ratio: float, points: int = 2001) -> SpectralMeasure:
    """比 ratio ∈ (0,1) の Marchenko–Pastur 密度（平均 1）"""
    y = float(ratio)
    if not 0.0 < y < 1.0:
        raise InvalidMeasure("ratio は (0, 1) の範囲", ratio=y)
    lo, hi = (1.0 - np.sqrt(y)) ** 2, (1.0 + np.sqrt(y)) ** 2
    g = np.linspace(lo, hi, int(points))
    v = np.sqrt(np.clip((hi - g) * (g - lo), 0.0, None)) / (2.0 * np.pi * y * g)
    return _normalized_density(g, v)


def load_measure(path: Union[str, Path]) -> SpectralMeasure:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidMeasure(f"測度ファイルを読めません: {p} ({e})", path=str(p)) from e
    return SpectralMeasure.from_json(data)


def save_measure(mu: SpectralMeasure, path: Union[str, Path]) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(mu.to_json(), sort_keys=True), encoding="utf-8")


_TAIL_TERMS = 24


def _series_tail(x: np.ndarray, mask: np.ndarray, kind: int) -> np.ndarray:
    """
    |x| < 0.1 での級数
      kind=1: x - log(1+x)          = Σ_{k>=2} (-1)^k x^k / k
      kind=2: log(1+x) - x/(1+x)    = Σ_{k>=2} (-1)^k (k-1) x^k / k
    """
    xs = np.where(mask, x, 0.0)
    out = np.zeros_like(xs)
    p = xs * xs
    for k in range(2, _TAIL_TERMS + 2):
        c = 1.0 / k if kind == 1 else (k - 1.0) / k
        out += (c if k % 2 == 0 else -c) * p
        p = p * xs
    return out
