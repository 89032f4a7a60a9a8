from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

from src.errors import ConfigError
from src.measures.spectral import SpectralMeasure, semicircle_density
from src.spiked.model import Side, SpikedModel
from src.subordination.config import DEFAULT_CONFIG, SolverConfig


def two_atom() -> SpectralMeasure:
    return SpectralMeasure.atomic([(1.0, 0.5), (3.0, 0.5)])


def regular() -> SpectralMeasure:
    # 平方根の端を持つ（端の正則性を満たす）半円密度
    return semicircle_density(2.0, 1.0)


@dataclass(frozen=True)
class Preset:
    """
    a_gaps / b_gaps はスパイクの強さではなく閾値からの距離（â_i − Ω_B(E₊) など）で持つ。
    強さ d は端を計算してから決める。
    """
    name: str
    muA: Callable[[], SpectralMeasure]
    muB: Callable[[], SpectralMeasure]
    a_gaps: Tuple[float, ...] = ()
    b_gaps: Tuple[float, ...] = ()

    def measures(self) -> Tuple[SpectralMeasure, SpectralMeasure]:
        return self.muA(), self.muB()

    @property
    def spiked(self) -> bool:
        return bool(self.a_gaps or self.b_gaps)

    def model(self, n: int, cfg: SolverConfig = DEFAULT_CONFIG) -> Optional[SpikedModel]:
        if not self.spiked:
            return None
        muA, muB = self.measures()
        base = SpikedModel(muA=muA, muB=muB, n=n, cfg=cfg)
        d_a = [strength_for_gap(base, Side.A, i + 1, g) for i, g in enumerate(self.a_gaps)]
        d_b = [strength_for_gap(base, Side.B, j + 1, g) for j, g in enumerate(self.b_gaps)]
        return base.with_strengths(d_a, d_b)


def strength_for_gap(model: SpikedModel, side: Side, index: int, gap: float) -> float:
    """â = a_index (1 + d) が閾値 + gap になる d（負にはしない）"""
    base = float((model.a_diag if side == Side.A else model.b_diag)[index - 1])
    return max(0.0, (model.threshold(side) + float(gap)) / base - 1.0)


PRESETS: Dict[str, Preset] = {
    "two-atom": Preset("two-atom", two_atom, two_atom),
    "regular": Preset("regular", regular, regular),
    "spiked": Preset("spiked", two_atom, two_atom, a_gaps=(0.5,)),
    "multi-spike": Preset("multi-spike", two_atom, two_atom, a_gaps=(2.0, 1.0), b_gaps=(1.5,)),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"未知の preset: {name!r}（{', '.join(sorted(PRESETS))}）", field="preset") from None
