import os

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


# ── Simulation ────────────────────────────────────────────────────────────────
DEFAULT_WORKERS = _int_env("FKMAP_WORKERS", 1)
DEFAULT_CAP = _int_env("FKMAP_CAP", 2 ** 26)

# ── Output ────────────────────────────────────────────────────────────────────
OUTPUT_DIR = os.getenv("FKMAP_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("FKMAP_LOG_LEVEL", "INFO").upper()

# ── API ───────────────────────────────────────────────────────────────────────
API_HOST = os.getenv("FKMAP_API_HOST", "0.0.0.0")
API_PORT = _int_env("FKMAP_API_PORT", 8000)

_raw_origins = os.getenv("FKMAP_ALLOWED_ORIGINS", "")
ALLOWED_ORIGINS = [o.strip() for o in _raw_origins.split(",") if o.strip()] or ["*"]
