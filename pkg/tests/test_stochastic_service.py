import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.models.stochastic import DensitySpec
from app.services import stochastic_service as ss
from app.utils.errors import InvalidParameterError
from app.utils.io_utils import read_csv
from app.utils.stats_utils import l1_density_distance


def test_brownian_is_deterministic_per_replicate():
    """Same (seed, replicate) gives the same path; ensemble rows match single draws."""
    a = ss.sample_brownian(1, 0.01, 1.0, seed=5, replicate=3)
    b = ss.sample_brownian(1, 0.01, 1.0, seed=5, replicate=3)
    assert np.array_equal(a.values, b.values)

    ens = ss.sample_brownian_ensemble(0.01, 1.0, [1, 3], seed=5)
    assert np.array_equal(ens.values[1], a.values)
    assert not np.array_equal(ens.values[0], a.values)


def test_brownian_endpoint_moments():
    """Endpoint of drifted BM has mean drift*T and variance T."""
    ens = ss.sample_brownian_ensemble(0.01, 1.0, 4000, drift=0.5, seed=1)
    end = ens.values[:, -1]
    assert abs(end.mean() - 0.5) < 0.07
    assert abs(end.var() - 1.0) < 0.12


def test_planar_brownian_is_complex():
    path = ss.sample_brownian(2, 0.01, 0.5, seed=2)
    assert np.iscomplexobj(path.values)
    assert path.values[0] == 0


def test_bad_brownian_parameters_raise():
    with pytest.raises(InvalidParameterError):
        ss.sample_brownian(3, 0.01, 1.0)
    with pytest.raises(InvalidParameterError):
        ss.sample_brownian(1, 2.0, 1.0)
    with pytest.raises(InvalidParameterError):
        ss.sample_brownian(1, -0.1, 1.0)


def test_bessel_phases():
    assert ss.bessel_phase(1.5) == "hits_and_reflects"
    assert ss.bessel_phase(2.0) == "neighbourhood_recurrent"
    assert ss.bessel_phase(3.0) == "transient"
    assert ss.radial_bessel_phase(0.25) == "hits_boundary"
    assert ss.radial_bessel_phase(1.0) == "avoids_boundary"


def test_bes3_mean_matches_quadrature():
    """E[BES^3_1 from 0] = 2 sqrt(2/pi)."""
    exact = ss.bes3_mean_quadrature(1.0)
    assert exact == pytest.approx(2 * math.sqrt(2 / math.pi), rel=1e-6)

    ens = ss.sample_bessel_ensemble(3.0, 0.0, 1e-3, 1.0, 4000, seed=11)
    end = ens.values[:, -1]
    se = end.std(ddof=1) / math.sqrt(end.size)
    assert np.all(ens.values >= 0)
    assert abs(end.mean() - exact) < 4 * se + 0.02


def test_low_dimensional_bessel_hits_zero():
    ens = ss.sample_bessel_ensemble(1.5, 0.2, 1e-3, 2.0, 50, seed=4)
    assert np.all(ens.values >= 0)
    assert ens.hits.sum() > 0
    hit_row = int(np.flatnonzero(ens.hits)[0])
    single = ss.sample_bessel(1.5, 0.2, 1e-3, 2.0, seed=4, replicate=hit_row)
    assert single.boundary_hits == ens.hits[hit_row]
    assert single.first_hit_time is not None


def test_transient_bessel_records_no_hits():
    """The hit flag is measured from the path, and d = 3 started away from 0 never crosses."""
    ens = ss.sample_bessel_ensemble(3.0, 2.0, 1e-3, 0.25, 20, seed=4)
    assert ens.hits.sum() == 0
    assert np.all(ens.values > 0)


def test_radial_bessel_hits_only_below_one_half():
    """a = 0.3 crosses the boundary from near 0, a = 1 started at pi/2 does not."""
    low = ss.sample_radial_bessel_ensemble(0.3, 0.05, 1e-3, 0.25, 20, seed=6)
    assert (low.hits > 0).mean() > 0.5
    assert np.all((low.values > 0) & (low.values < np.pi))

    high = ss.sample_radial_bessel_ensemble(1.0, np.pi / 2, 1e-3, 0.25, 20, seed=6)
    assert high.hits.sum() == 0
    single = ss.sample_radial_bessel(0.3, 0.05, 1e-3, 0.25, seed=6, replicate=0)
    assert single.boundary_hits == low.hits[0]


@pytest.mark.parametrize("a", [1.0, 2.0, 4.0 / 3.0])
def test_radial_stationary_sampler_matches_density(a):
    samples = ss.sample_radial_bessel_stationary(a, 200_000, seed=3)
    dist = l1_density_distance(samples, lambda y: ss.radial_bessel_stationary_density(a, y), 0.0, np.pi, bins=50)
    assert dist < 0.05


def test_radial_bessel_preserves_stationary_law():
    """Started from the stationary law, the SDE stays close to it."""
    a = 1.0
    y0 = ss.sample_radial_bessel_stationary(a, 5000, seed=8)
    ens = ss.sample_radial_bessel_ensemble(a, y0, 1e-3, 1.0, 5000, seed=8, record_every=1000)
    assert ens.values.shape == (5000, 2)
    end = ens.values[:, -1]
    assert np.all((end > 0) & (end < np.pi))
    dist = l1_density_distance(end, lambda y: ss.radial_bessel_stationary_density(a, y), 0.0, np.pi, bins=20)
    assert dist < 0.15


def test_density_masses():
    for spec in (
        DensitySpec(kind="first_passage_drift", params={"alpha": 1.0, "b": 2.0}),
        DensitySpec(kind="first_passage_level0", params={"b": 1.0}),
        DensitySpec(kind="bes3_transition", params={"t": 1.0}),
    ):
        assert ss.density_mass(spec) == pytest.approx(1.0, abs=1e-4)


def test_density_table_and_bad_arguments():
    spec = DensitySpec(kind="bes3_transition", params={"t": 2.0})
    table = ss.density_table(spec, 0.1, 5.0, 11)
    assert len(table) == 11
    assert all(v > 0 for _, v in table)
    with pytest.raises(InvalidParameterError):
        ss.density(spec, 0.0)
    with pytest.raises(InvalidParameterError):
        ss.density_table(spec, 1.0, 0.5, 3)
    with pytest.raises(ValueError):
        DensitySpec(kind="first_passage_drift", params={"alpha": 1.0})


def test_density_table_export(tmp_path):
    spec = DensitySpec(kind="first_passage_level0", params={"b": 1.0})
    path = ss.export_density_table(spec, 0.5, 2.0, 4, tmp_path / "tau.csv")
    header, rows = read_csv(path)
    assert header == ["x", "density"]
    assert rows.shape == (4, 2)
    assert rows[0, 1] == pytest.approx(ss.density(spec, 0.5))


def test_bes3_laplace_scaling():
    """t^{3/2} E[exp(-Z_t)] stabilises for large t."""
    q64 = ss.bes3_laplace_quadrature(1.0, 64.0) * 64.0 ** 1.5
    q256 = ss.bes3_laplace_quadrature(1.0, 256.0) * 256.0 ** 1.5
    assert 0.8 < q64 / q256 < 1.25

    est, se = ss.bes3_laplace(1.0, 64.0, 1_000_000, seed=2)
    assert abs(est - ss.bes3_laplace_quadrature(1.0, 64.0)) < 4 * se

    with pytest.raises(InvalidParameterError):
        ss.bes3_laplace(1.0, 1.0, 10)


def test_conditioned_positive_path():
    path = ss.sample_conditioned_positive(1.0, 1e-3, 2.0, seed=6)
    assert path.values[0] == 0.0
    assert path.values.size == 2001
    assert np.all(path.values >= 0)
    assert path.params["last_zero"] >= 0


def test_last_passage_times():
    ens = ss.sample_brownian_ensemble(0.01, 20.0, 200, drift=1.0, seed=9)
    lp = ss.last_passage_times(ens, 1.0)
    finite = lp[np.isfinite(lp)]
    assert finite.size > 190
    assert np.all((finite > 0) & (finite <= 20.0))


def test_bessel_martingale_has_unit_mean():
    ens = ss.sample_brownian_ensemble(1e-3, 0.5, 3000, seed=12, x0=1.0)
    finals = np.array([ss.bessel_martingale(ens.path(i), 2.0)[-1] for i in range(3000)])
    se = finals.std(ddof=1) / math.sqrt(finals.size)
    assert abs(finals.mean() - 1.0) < 4 * se + 0.02


def test_radial_bessel_martingale_has_unit_mean():
    ens = ss.sample_brownian_ensemble(1e-3, 0.5, 3000, seed=13, x0=math.pi / 2)
    finals = np.array([ss.radial_bessel_martingale(ens.path(i), 2.0)[-1] for i in range(3000)])
    se = finals.std(ddof=1) / math.sqrt(finals.size)
    assert abs(finals.mean() - 1.0) < 4 * se + 0.02


def test_martingale_rejects_bad_start():
    path = ss.sample_brownian(1, 0.01, 0.1, x0=0.0)
    with pytest.raises(InvalidParameterError):
        ss.bessel_martingale(path, 2.0)
