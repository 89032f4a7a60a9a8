from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

from src.util.debuglog import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


def fmt_float(v: float) -> str:
    # 同じ入力なら同じ文字列（再実行でバイト一致させる）
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def plain(obj: Any) -> Any:
    """numpy / complex / Enum を JSON に載る形へ"""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (complex, np.complexfloating)):
        return [plain(obj.real), plain(obj.imag)]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON に NaN/Infinity を出さない
        return v if math.isfinite(v) else fmt_float(v)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), (str, int)):
        return obj.value
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(plain(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: PathLike, obj: Any) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dumps(obj), encoding="utf-8")
    logger.debug("wrote %s", p)
    return p


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(header))
        for r in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in r])
    logger.debug("wrote %s", p)
    return p


def sidecar_path(path: PathLike) -> Path:
    # out.csv -> out.csv.meta.json
    p = Path(path)
    return p.with_name(p.name + ".meta.json")
