from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional

from teich_recur.exceptions import ConfigError

logger = logging.getLogger(__name__)

BUDGET_ENV_VAR = "TEICH_RECUR_BUDGET"

DEFAULT_BUDGET = 2_000_000
DEFAULT_DT = 0.05
DEFAULT_GRID = 1024
FD_STEP = 1e-6
DEFAULT_HYSTERESIS_RATIO = 1.5
DEFAULT_THETA_CAP = 50.0
DEFAULT_CANDIDATE_RADIUS = 8.0
DEFAULT_BATCH_SIZE = 10_000


@dataclass(frozen=True)
class Settings:
    budget: int = DEFAULT_BUDGET
    dt: float = DEFAULT_DT
    grid: int = DEFAULT_GRID
    hysteresis_ratio: float = DEFAULT_HYSTERESIS_RATIO
    theta_cap: float = DEFAULT_THETA_CAP
    candidate_radius: float = DEFAULT_CANDIDATE_RADIUS
    batch_size: int = DEFAULT_BATCH_SIZE


def _read_budget(environ: Dict[str, str]) -> int:
    raw = environ.get(BUDGET_ENV_VAR)
    if raw is None or raw.strip() == "":
        return DEFAULT_BUDGET
    try:
        budget = int(raw)
    except ValueError:
        raise ConfigError(
            f"{BUDGET_ENV_VAR} must be an integer, got {raw!r}",
            key=BUDGET_ENV_VAR,
        )
    if budget <= 0:
        raise ConfigError(
            f"{BUDGET_ENV_VAR} must be positive, got {budget}",
            key=BUDGET_ENV_VAR,
        )
    return budget


def get_settings(environ: Optional[Dict[str, str]] = None) -> Settings:
    """Build Settings from the process environment.

    Only the enumeration budget is environment-driven; every other field keeps
    its module default.
    """

    env = dict(os.environ) if environ is None else environ
    return Settings(budget=_read_budget(env))


def parse_config_text(
    text: str,
    allowed_keys: Optional[Iterable[str]] = None,
    source: str = "<config>",
) -> Dict[str, str]:
    """Parse ``key = value`` lines with ``#`` comments.

    Values stay strings; the caller converts them with the same converters it
    uses for command-line flags. Unknown keys raise ConfigError naming the key.
    """

    allowed = set(allowed_keys) if allowed_keys is not None else None
    values: Dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {raw_line!r}"
            )
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if allowed is not None and key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {source}", key=key)
        values[key] = value
    return values


def load_config_file(
    path: Path,
    allowed_keys: Optional[Iterable[str]] = None,
) -> Dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    logger.debug("loaded config file %s", path)
    return parse_config_text(text, allowed_keys, source=str(path))
