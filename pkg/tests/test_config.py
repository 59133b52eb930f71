import importlib
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import app.config as config_module


def test_defaults(monkeypatch):
    """Defaults apply when no SLELAB_* variables are set."""
    for name in ("SLELAB_WORKERS", "SLELAB_WOS_DELTA", "SLELAB_DEBUG", "SLELAB_API_TOKEN"):
        monkeypatch.delenv(name, raising=False)
    importlib.reload(config_module)

    settings = config_module.settings
    assert settings.WORKERS == 1
    assert settings.WOS_DELTA == 1e-6
    assert settings.WHOLE_PLANE_R0 == 1e-4
    assert settings.N_MODES == 64
    assert settings.DEBUG is False
    assert settings.API_TOKEN is None


def test_env_overrides(monkeypatch):
    """Numeric knobs and output paths can be set from the environment."""
    monkeypatch.setenv("SLELAB_WORKERS", "4")
    monkeypatch.setenv("SLELAB_WOS_DELTA", "1e-5")
    monkeypatch.setenv("SLELAB_OUTPUT_DIR", "/tmp/slelab-out")
    monkeypatch.setenv("SLELAB_DEBUG", "TRUE")
    monkeypatch.setenv("SLELAB_N_MODES", "")
    importlib.reload(config_module)

    settings = config_module.settings
    assert settings.WORKERS == 4
    assert settings.WOS_DELTA == 1e-5
    assert settings.OUTPUT_DIR == "/tmp/slelab-out"
    assert settings.DEBUG is True
    assert settings.N_MODES == 64

    # Clean up: reload settings without the overridden env vars
    for name in ("SLELAB_WORKERS", "SLELAB_WOS_DELTA", "SLELAB_OUTPUT_DIR", "SLELAB_DEBUG", "SLELAB_N_MODES"):
        monkeypatch.delenv(name, raising=False)
    importlib.reload(config_module)
