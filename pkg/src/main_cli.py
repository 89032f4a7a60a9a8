from __future__ import annotations

import sys
from typing import Optional, Sequence

from src.cli.config import parse_args
from src.cli.run import error_record, run
from src.errors import ConfigError
from src.storage.export import dumps
from src.storage.models import RunStatus


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = parse_args(argv)
    except ConfigError as e:
        sys.stdout.write(dumps(error_record(e)))
        return RunStatus.CONFIG_ERROR.exit_code
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
