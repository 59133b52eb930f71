import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.models.gff import FieldGrid, q_parameter
from app.services import gff_service as gs
from app.services import stochastic_service as ss
from app.utils.errors import InvalidParameterError, OutOfDomainError
from app.utils.io_utils import read_csv

GAMMA = math.sqrt(2.0)


def _grid(x0=-2.0, x1=2.0, dx=0.01):
    return FieldGrid(x0=x0, x1=x1, dx=dx)


def test_rectangle_covariance_matches_green_function():
    """Var (h, f) for an eigenfunction f equals (f, G f) = 1/(4 pi)."""
    nq = 64
    xq = (np.arange(nq) + 0.5) / nq
    f = np.outer(np.sin(np.pi * xq), np.sin(np.pi * xq))
    exact = gs.rectangle_green((1.0, 1.0), 8, f, f, nq=nq)
    assert exact == pytest.approx(1 / (4 * math.pi), rel=1e-3)

    pairs = np.array([
        gs.pair_with(gs.sample_zero_boundary_gff((1.0, 1.0), n_modes=8, seed=1, replicate=r), f, nq=nq)
        for r in range(4000)
    ])
    assert pairs.var() == pytest.approx(exact, rel=0.1)


def test_zero_boundary_field_vanishes_on_boundary():
    field = gs.sample_zero_boundary_gff((2.0, 1.0), n_modes=16, seed=3)
    values = gs.evaluate_field(field, [0.0 + 0.5j, 2.0 + 0.3j, 1.0 + 0j])
    assert np.allclose(values, 0.0, atol=1e-10)
    with pytest.raises(OutOfDomainError):
        gs.evaluate_field(field, [3.0 + 0.5j])


def test_origin_circle_average_variance():
    """Whole-plane circle average around 0 has variance |log eps|."""
    grid = _grid(-3.0, 1.0)
    eps = math.exp(-2.0)
    values = np.array([
        gs.vertical_or_circle_average(gs.sample_whole_plane_gff_cylinder(grid, n_modes=4, seed=5, replicate=r), "origin", eps)
        for r in range(2000)
    ])
    assert values.var() == pytest.approx(2.0, abs=0.3)


def test_strip_vertical_average_variance():
    grid = _grid(-1.0, 2.0)
    values = np.array([
        gs.vertical_or_circle_average(gs.sample_free_boundary_gff_strip(grid, n_modes=4, seed=6, replicate=r), "vertical", 1.0)
        for r in range(2000)
    ])
    assert values.var() == pytest.approx(2.0, abs=0.3)
    assert gs.vertical_or_circle_average(gs.sample_free_boundary_gff_strip(grid, n_modes=4), "vertical", 0.0) == pytest.approx(0.0, abs=1e-12)


def test_grid_must_contain_zero():
    with pytest.raises(InvalidParameterError):
        gs.sample_free_boundary_gff_strip(FieldGrid(x0=0.5, x1=2.0, dx=0.1))


def test_q_wedge_radial_part_is_bessel():
    """Left half of the Q-wedge mean process is -BES^3 at doubled time."""
    spec = gs.wedge_spec(GAMMA, alpha=q_parameter(GAMMA))
    assert spec.is_q_wedge
    grid = _grid(-1.0, 0.5, 0.01)
    samples = []
    for r in range(500):
        field = gs.build_surface_field(spec, grid, seed=7, replicate=r, n_modes=2)
        samples.append(-np.interp(-0.5, field.radial.times, field.radial.values))
    rng = np.random.default_rng(0)
    reference = np.sqrt(rng.chisquare(3, size=5000))
    assert np.all(np.asarray(samples) >= 0)
    assert ss.ks_pvalue(np.asarray(samples), reference) > 1e-3


def test_first_exit_embedding_is_negative_before_zero():
    spec = gs.wedge_spec(GAMMA, alpha=0.0)
    field = gs.build_surface_field(spec, _grid(-1.0, 1.0, 0.01), seed=8, n_modes=4)
    hits = gs.radial_hits_zero(field)
    assert hits["value"] == 0.0
    assert hits["negative_before"]


def test_weight_alpha_conversions():
    for surface in ("wedge", "cone"):
        w = gs.weight_from_alpha(GAMMA, 0.3, surface)
        assert gs.alpha_from_weight(GAMMA, w, surface) == pytest.approx(0.3)
    assert gs.weight_from_alpha(GAMMA, GAMMA, "cone") == pytest.approx(2.0)
    spec = gs.wedge_spec(GAMMA, weight=2.0, surface="cone")
    assert spec.alpha == pytest.approx(GAMMA)


def test_wedge_spec_rejects_bad_input():
    with pytest.raises(InvalidParameterError):
        gs.wedge_spec(GAMMA)
    with pytest.raises(InvalidParameterError):
        gs.wedge_spec(GAMMA, alpha=0.1, weight=1.0)
    with pytest.raises(InvalidParameterError):
        gs.wedge_spec(GAMMA, alpha=q_parameter(GAMMA) + 0.5)


def test_shift_and_coordinate_change():
    field = gs.sample_free_boundary_gff_strip(_grid(), n_modes=8, seed=9)
    z = np.array([0.3 + 1.0j, -0.7 + 2.5j])
    base = gs.evaluate_field(field, z)
    assert np.allclose(gs.evaluate_field(gs.shift_field(field, 1.5), z), base + 1.5)

    moved = gs.coordinate_change(field, math.exp(0.5))
    assert np.allclose(gs.evaluate_field(moved, z - 0.5), base)


def test_half_plane_picture_reflects():
    field = gs.sample_free_boundary_gff_strip(_grid(), n_modes=8, seed=10)
    half = gs.to_half_plane(field)
    w = math.exp(0.2) * np.exp(0.5j)
    assert gs.evaluate_field(half, [w])[0] == pytest.approx(gs.evaluate_field(field, [0.2 + 0.5j])[0])
    assert gs.evaluate_field(half, [w.conjugate()])[0] == pytest.approx(gs.evaluate_field(half, [w])[0])


def test_disk_harmonic_part_variance():
    """Var at |z| = r is -2 log(1 - r^2)."""
    values = gs.sample_disk_harmonic_part([0.5 + 0j, 0.0 + 0j], replicates=4000, seed=11)
    assert np.allclose(values[:, 1], 0.0)
    assert values[:, 0].var() == pytest.approx(-2 * math.log(0.75), abs=0.06)
    with pytest.raises(OutOfDomainError):
        gs.sample_disk_harmonic_part([1.5 + 0j])


def test_export_field(tmp_path):
    field = gs.sample_free_boundary_gff_strip(_grid(-0.5, 0.5, 0.1), n_modes=4, seed=12)
    xs, ys, values = gs.materialize(field, ny=6)
    assert values.shape == (6, xs.size)

    path = gs.export_field(field, tmp_path / "field.csv", ny=6)
    header, rows = read_csv(path)
    assert header == ["x", "y", "value"]
    assert rows.shape == (6 * xs.size, 3)
    with pytest.raises(InvalidParameterError):
        gs.export_field(field, tmp_path / "field.bad", fmt="xml")
