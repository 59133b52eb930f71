import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.database import cache
from app.models.lab import Report, RunConfig
from app.services import lab_service
from app.utils.errors import InsufficientScalesError, InvalidParameterError
from app.utils.io_utils import read_csv


def _intensity_cfg(**overrides):
    data = dict(experiment="intensity_profile", replicates=200, points=[0.2, 0.4, 0.8], n_terms=16, seed=5)
    data.update(overrides)
    return RunConfig(**data)


def _modulus_cfg(**overrides):
    data = dict(experiment="sle8_modulus", replicates=2, dt=2.0 ** -12, T=0.25, control_kappa=None, seed=1)
    data.update(overrides)
    return RunConfig(**data)


def test_run_config_validation():
    with pytest.raises(ValidationError):
        RunConfig(experiment="sle8_modulus", epsilons=[0.1, 0.2])
    with pytest.raises(ValidationError):
        RunConfig(experiment="sle8_modulus", epsilons=[0.1, -0.01])
    with pytest.raises(ValidationError):
        RunConfig(experiment="sle8_modulus", replicates=0)
    with pytest.raises(ValidationError):
        RunConfig(experiment="nope")
    cfg = RunConfig(experiment="moment_scaling")
    assert cfg.dt == 2.0 ** -14
    assert cfg.workers == 1


def test_run_config_from_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('experiment = "qh_divergence"\nseed = 3\nlevels = [5, 6, 7]\nraster_size = 256\n')
    cfg = RunConfig.from_toml(path, seed=9, output=None)
    assert cfg.experiment == "qh_divergence"
    assert cfg.seed == 9
    assert cfg.levels == [5, 6, 7]
    assert cfg.output == "out"


def test_modulus_of_continuity_on_a_line():
    """For eta(t) = t the modulus is delta itself."""
    pts = 0.1 * np.arange(11).astype(complex)
    out = lab_service.modulus_of_continuity(pts, 0.1, [0.3, 0.1, 0.5, 5.0])
    assert out == pytest.approx([0.3, 0.1, 0.5, 1.0])


def test_usable_ladder_drops_scales_below_resolution():
    keep, dropped = lab_service._usable_ladder([0.5, 0.1, 1e-4], 1e-3, 0.5, "test")
    assert keep == [0.5, 0.1]
    assert dropped == [1e-4]


def test_intensity_profile_report():
    report = lab_service.run_experiment(_intensity_cfg())
    assert report.experiment == "intensity_profile"
    assert [s.scale for s in report.scales] == [0.2, 0.4, 0.8]
    assert all(s.estimate > 0 and s.n == 200 for s in report.scales)
    assert report.fit is not None
    assert report.diagnostics["expected_im_exponent"] == pytest.approx(-1.0)
    assert report.params["gamma"] == pytest.approx(math.sqrt(2.0))
    assert len(report.diagnostics["harmonic_factor"]) == 3
    assert all(h > 0 for h in report.diagnostics["harmonic_exact"])
    assert "harmonic_im_exponent" in report.diagnostics


def test_reports_are_reproducible():
    a = lab_service.run_experiment(_intensity_cfg())
    b = lab_service.run_experiment(_intensity_cfg())
    assert [s.estimate for s in a.scales] == [s.estimate for s in b.scales]
    c = lab_service.run_experiment(_intensity_cfg(seed=6))
    assert [s.estimate for s in a.scales] != [s.estimate for s in c.scales]


def test_intensity_profile_needs_three_heights():
    report = lab_service.run_experiment(_intensity_cfg(points=[0.2, 0.4]))
    assert report.fit is None
    assert "fit_error" in report.diagnostics


def test_sle8_modulus_small_run():
    report = lab_service.run_experiment(_modulus_cfg())
    scales = [s.scale for s in report.scales]
    assert scales == sorted(scales, reverse=True)
    assert min(scales) >= 4 * 2.0 ** -12
    assert len(scales) == 5
    assert report.diagnostics["target_exponent"] == 0.25
    means = [s.estimate for s in report.scales]
    assert all(m > 0 for m in means)
    assert means == sorted(means, reverse=True)
    assert report.fit is not None
    assert len(report.diagnostics["local_exponents"]) == len(scales) - 1


def test_sle8_modulus_refuses_fit_with_too_few_scales():
    report = lab_service.run_experiment(_modulus_cfg(epsilons=[0.25, 0.125, 0.0625]))
    assert len(report.scales) == 3
    assert report.fit is None
    assert "fit_error" in report.diagnostics
    with pytest.raises(InsufficientScalesError):
        lab_service.run_experiment(_modulus_cfg(epsilons=[1e-4]))


def test_fixed_kappa_experiments_reject_other_kappa():
    with pytest.raises(InvalidParameterError):
        lab_service.run_experiment(_modulus_cfg(kappa=6.0))
    with pytest.raises(InvalidParameterError):
        lab_service.run_experiment(RunConfig(experiment="sle4_escape", kappa=8.0, replicates=1))
    with pytest.raises(InvalidParameterError):
        lab_service.run_experiment(RunConfig(experiment="qh_divergence", kappa=2.0, replicates=1))
    report = lab_service.run_experiment(_modulus_cfg(kappa=8.0, epsilons=[0.25, 0.125, 0.0625]))
    assert report.params["kappa"] == 8.0


def test_moment_scaling_report():
    cfg = RunConfig(experiment="moment_scaling", replicates=6, epsilons=[0.25, 0.125, 0.0625], delta=0.25,
                    n_modes=4, seed=2)
    report = lab_service.run_experiment(cfg)
    assert len(report.scales) == 3
    assert report.fit is not None
    assert report.diagnostics["expected_slope"] == pytest.approx(math.sqrt(2.0) / 2)
    assert report.diagnostics["truncation"] == 12


def test_qh_divergence_small_run(tmp_path, monkeypatch):
    monkeypatch.setattr(cache.settings, "CACHE_DIR", str(tmp_path / "cache"))
    cfg = RunConfig(experiment="qh_divergence", replicates=1, dt=2.0 ** -8, T=0.5, levels=[5, 6, 7],
                    raster_size=256)
    report = lab_service.run_experiment(cfg)
    assert [s.scale for s in report.scales] == [2.0 ** -5, 2.0 ** -6, 2.0 ** -7]
    assert all(s.estimate > 0 for s in report.scales)
    assert set(report.diagnostics["disk_ratio"]) == {"5->7"}
    assert len(report.diagnostics["disk_qh_integral"]) == 3
    # 2 回目はキャッシュから同じラスタ
    again = lab_service.run_experiment(cfg)
    assert [s.estimate for s in again.scales] == [s.estimate for s in report.scales]


def test_emit_report_round_trip(tmp_path):
    report = lab_service.run_experiment(_intensity_cfg())
    written = lab_service.emit_report(report, tmp_path)
    assert set(written) == {"json", "csv", "plot"}

    loaded = lab_service.load_report(written["json"])
    assert isinstance(loaded, Report)
    assert loaded.scales == report.scales
    assert json.loads(written["json"].read_text())["meta"]["seed"] == 5

    header, rows = read_csv(written["csv"])
    assert header == lab_service.SCALE_COLUMNS
    assert rows.shape == (3, 4)
    assert rows[:, 0].tolist() == [0.2, 0.4, 0.8]

    script = written["plot"].read_text()
    assert written["plot"].name == "plot_intensity_profile.py"
    assert "intensity_profile.csv" in script


def test_emit_report_rejects_unknown_format(tmp_path):
    report = lab_service.run_experiment(_intensity_cfg())
    with pytest.raises(InvalidParameterError):
        lab_service.emit_report(report, tmp_path, formats=["xml"])


def test_report_rejects_non_finite_numbers():
    report = lab_service.run_experiment(_intensity_cfg())
    data = report.model_dump()
    data["scales"][0]["estimate"] = float("nan")
    with pytest.raises(ValidationError):
        Report(**data)
