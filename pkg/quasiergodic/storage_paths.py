from __future__ import annotations

import sys
from pathlib import Path


APP_NAME = "quasiergodic"


def get_app_data_dir() -> Path:
    """Return a writable per-user directory for run artifacts."""
    if sys.platform == "darwin":
        base_dir = Path.home() / "Library" / "Application Support"
    else:
        base_dir = Path.home() / ".local" / "share"

    app_dir = base_dir / APP_NAME
    app_dir.mkdir(parents=True, exist_ok=True)
    return app_dir
