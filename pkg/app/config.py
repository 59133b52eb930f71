import os
from typing import Optional


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw in (None, ""):
        return default
    return float(raw)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw in (None, ""):
        return default
    return int(raw)


class Settings:
    # 出力先
    OUTPUT_DIR: str = os.getenv("SLELAB_OUTPUT_DIR", "out")
    CACHE_DIR: str = os.getenv("SLELAB_CACHE_DIR", ".slelab_cache")
    WORKERS: int = _env_int("SLELAB_WORKERS", 1)

    # Bessel / radial Bessel
    BESSEL_DELTA0: float = _env_float("SLELAB_BESSEL_DELTA0", 1e-9)

    # Loewner
    WHOLE_PLANE_R0: float = _env_float("SLELAB_WHOLE_PLANE_R0", 1e-4)
    SWALLOW_TOL: float = _env_float("SLELAB_SWALLOW_TOL", 1e-6)
    MAX_HALVINGS: int = _env_int("SLELAB_MAX_HALVINGS", 30)

    # GFF / LQG
    N_MODES: int = _env_int("SLELAB_N_MODES", 64)
    CIRCLE_POINTS: int = _env_int("SLELAB_CIRCLE_POINTS", 64)
    T_MAX: float = _env_float("SLELAB_T_MAX", 40.0)

    # walk-on-spheres
    WOS_DELTA: float = _env_float("SLELAB_WOS_DELTA", 1e-6)
    WOS_MAX_STEPS: int = _env_int("SLELAB_WOS_MAX_STEPS", 10000)
    R_MACRO: float = _env_float("SLELAB_R_MACRO", 1.0)

    # App
    DEBUG: bool = os.getenv("SLELAB_DEBUG", "false").lower() == "true"
    API_TOKEN: Optional[str] = os.getenv("SLELAB_API_TOKEN")

settings = Settings()
