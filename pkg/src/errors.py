from __future__ import annotations

from typing import Any, Dict, Optional


class FreeConvError(RuntimeError):
    """
    数値計算で起きる失敗の基底クラス。
    cause は CLI の JSON エラーレコードにそのまま出す機械可読なキー。
    """

    cause = "numerical_failure"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details: Dict[str, Any] = dict(details)

    def to_record(self) -> Dict[str, Any]:
        rec: Dict[str, Any] = {"status": "error", "cause": self.cause, "message": str(self)}
        if self.details:
            rec["details"] = {k: _jsonable(v) for k, v in self.details.items()}
        return rec


def _jsonable(v: Any) -> Any:
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (int, float, str, bool)) or v is None:
        return v
    try:
        return float(v)
    except Exception:
        return repr(v)


# -------------------
# measures
# -------------------

class InvalidMeasure(FreeConvError, ValueError):
    cause = "invalid_measure"


class SupportCollision(FreeConvError):
    cause = "support_collision"


class MTransformPole(FreeConvError):
    cause = "m_transform_pole"


class NonPositiveSample(FreeConvError, ValueError):
    cause = "non_positive_sample"


# -------------------
# subordination
# -------------------

class ScheduleError(FreeConvError, ValueError):
    cause = "bad_schedule"


class NoConvergence(FreeConvError):
    cause = "no_convergence"


class LeftAdmissibleRegion(FreeConvError):
    cause = "left_admissible_region"


class BranchJump(FreeConvError):
    cause = "branch_jump"


class StabilityDegenerate(FreeConvError):
    cause = "stability_degenerate"


# -------------------
# convolution / spiked / lab
# -------------------

class EdgeBracketFailure(FreeConvError):
    cause = "edge_bracket_failure"


class SubcriticalTarget(FreeConvError, ValueError):
    cause = "subcritical_target"


class SubcriticalInS(FreeConvError, ValueError):
    cause = "subcritical_in_s"


class OutlierInsideBulk(FreeConvError, ValueError):
    cause = "outlier_inside_bulk"


class DecompositionFailure(FreeConvError):
    cause = "decomposition_failure"


class ConfigError(ValueError):
    """設定ミス（CLI では exit 1）"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field
