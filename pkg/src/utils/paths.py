"""Path helpers for resources, logs and atomic output files."""

import os
import tempfile
from pathlib import Path

from platformdirs import user_log_dir

_PROJECT_ROOT = Path(__file__).resolve().parents[2]

LOG_FILE_ENV = "AUTOCALIB_LOG_FILE"


def resource_path(relative_path: str) -> str:
    """Resolve a path to a shipped resource.

    Args:
        relative_path: Path relative to the project root
            (e.g. "assets/models/combi.json").

    Returns:
        Absolute path to the resource.
    """
    return str(_PROJECT_ROOT / relative_path)


def get_log_path() -> str:
    """Return the path for the pipeline log file.

    ``AUTOCALIB_LOG_FILE`` wins when set. Otherwise the log goes to the
    platform user log directory.
    """
    override = os.environ.get(LOG_FILE_ENV)
    if override:
        return override

    log_dir = Path(user_log_dir("autocalib", appauthor=False))
    log_dir.mkdir(parents=True, exist_ok=True)
    return str(log_dir / "autocalib.log")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write ``data`` to a sibling temp file and rename it over ``path``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
