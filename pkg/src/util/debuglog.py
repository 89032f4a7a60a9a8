from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional

DEBUG_PRINT = False

LOG_PATH = Path("logs") / "freeconv_debug.log"

_ROOT = "freeconv"
_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
_configured = False


def _debug_enabled() -> bool:
    if DEBUG_PRINT:
        return True
    return os.environ.get("FREECONV_DEBUG", "").strip() not in ("", "0", "false")


def _has_file_sink(root: logging.Logger) -> bool:
    return any(isinstance(h, logging.FileHandler) for h in root.handlers)


def configure(debug: Optional[bool] = None) -> None:
    """
    console + file の2系統。file は debug のときだけで、あとから debug にしても付く。
    ファイルが作れなくても計算は止めない。
    """
    global _configured
    root = logging.getLogger(_ROOT)
    level = logging.DEBUG if (debug if debug is not None else _debug_enabled()) else logging.INFO
    root.setLevel(level)
    fmt = logging.Formatter(_FORMAT)

    # 1) console
    if not _configured:
        console = logging.StreamHandler()
        console.setFormatter(fmt)
        root.addHandler(console)
        root.propagate = False
        _configured = True

    # 2) file（debug のときだけ）
    if level == logging.DEBUG and not _has_file_sink(root):
        try:
            LOG_PATH.parent.mkdir(parents=True, exist_ok=True)
            fh = logging.FileHandler(LOG_PATH, encoding="utf-8")
            fh.setFormatter(fmt)
            root.addHandler(fh)
        except Exception:
            pass

    for h in root.handlers:
        h.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    # src.subordination.solver -> freeconv.subordination.solver
    short = name[4:] if name.startswith("src.") else name
    return logging.getLogger(f"{_ROOT}.{short}")
