import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.models.conformal import ObstacleSet, ReachRadius
from app.services import conformal_service as cs
from app.utils.errors import InvalidParameterError, InvalidStartError


def test_half_plane_outside_interval():
    """From i the harmonic measure of |x| > 1 is 1/2."""
    obstacles = ObstacleSet(real_line=True, delta_abs=1e-4)
    res = cs.escape_probability(obstacles, 1j, cs.hits_outside_interval("real_line", -1.0, 1.0), 4000, seed=1)
    assert abs(res["p"] - 0.5) < 0.05
    assert res["ci_lo"] <= res["p"] <= res["ci_hi"]
    assert res["walks"] == 4000


def test_strip_midline_is_symmetric():
    obstacles = ObstacleSet(strip_height=1.0, delta_abs=1e-4)
    res = cs.escape_probability(obstacles, 0.5j, cs.hits("strip_top"), 4000, seed=2)
    assert abs(res["p"] - 0.5) < 0.05
    assert res["unfinished"] == 0


def test_disk_arc_measure():
    obstacles = ObstacleSet(circle=(0j, 1.0), delta_abs=1e-4)
    quarter = cs.escape_probability(obstacles, 0j, cs.hits_arc(0.0, math.pi / 2), 4000, seed=3)
    assert abs(quarter["p"] - 0.25) < 0.04
    wrapped = cs.escape_probability(obstacles, 0j, cs.hits_arc(1.5 * math.pi, 0.5 * math.pi), 4000, seed=3)
    assert abs(wrapped["p"] - 0.5) < 0.05


def test_harmonic_measure_agrees_with_escape_probability():
    obstacles = ObstacleSet(strip_height=1.0, delta_abs=1e-4)
    hm = cs.harmonic_measure(obstacles, 0.3j, {"top": cs.hits("strip_top")}, 2000, seed=4)
    esc = cs.escape_probability(obstacles, 0.3j, cs.hits("strip_top"), 2000, seed=4)
    assert hm["counts"]["top"] == esc["successes"]
    assert sum(hm["mass"].values()) == pytest.approx(1.0)
    assert "other" in hm["mass"]


def test_beurling_exponent_near_slit_tip():
    """Escaping from distance eps behind a slit tip costs eps^{1/2}."""
    obstacles = ObstacleSet(polylines=[np.array([0.0, 4.0], dtype=complex)], delta_abs=1e-4)
    eps = np.array([1 / 16, 1 / 64, 1 / 256])
    p = np.array([
        cs.escape_probability(obstacles, -e + 0j, ReachRadius(radius=1.0), 4000, seed=5)["p"] for e in eps
    ])
    slope = np.polyfit(np.log(eps), np.log(p), 1)[0]
    assert abs(slope - 0.5) < 0.12


def test_dense_polyline_matches_short_one():
    """Long polylines go through the kd-tree bound and agree with the brute-force distance."""
    short = ObstacleSet(polylines=[np.array([0.0, 4.0], dtype=complex)], delta_abs=1e-4)
    dense = ObstacleSet(polylines=[np.linspace(0.0, 4.0, 400).astype(complex)], delta_abs=1e-4)
    a = cs.escape_probability(short, -1 / 16 + 0j, ReachRadius(radius=1.0), 4000, seed=6)
    b = cs.escape_probability(dense, -1 / 16 + 0j, ReachRadius(radius=1.0), 4000, seed=7)
    assert abs(a["p"] - b["p"]) < 0.05


def test_invalid_start():
    obstacles = ObstacleSet(real_line=True, delta_abs=1e-6)
    with pytest.raises(InvalidStartError):
        cs.simulate_walks(obstacles, -1j, 10)
    with pytest.raises(InvalidStartError):
        cs.simulate_walks(obstacles, 1e-7j, 10)
    with pytest.raises(InvalidParameterError):
        cs.simulate_walks(obstacles, 1j, 0)


def test_walks_are_keyed_by_chunk():
    obstacles = ObstacleSet(circle=(0j, 1.0), delta_abs=1e-4)
    small = cs.simulate_walks(obstacles, 0.2j, cs.WALK_CHUNK, seed=8)
    large = cs.simulate_walks(obstacles, 0.2j, cs.WALK_CHUNK + 100, seed=8)
    assert np.array_equal(small["point"], large["point"][:cs.WALK_CHUNK])
    assert set(large["component"]) == {"circle"}
    assert np.allclose(np.abs(large["point"]), 1.0)


def test_side_measures_and_admissible_points():
    left = np.array([-1 - 3j, -1 + 3j])
    right = np.array([1 - 3j, 1 + 3j])
    m = cs.side_measures([left, right], 0j, 2000, seed=9, delta=1e-4)
    assert m.sum() == pytest.approx(1.0)
    assert abs(m[0] - m[1]) < 0.1

    kept = cs.admissible_points([left, right], [0j, 0.95 + 0j], 1000, seed=9)
    assert kept.tolist() == [0j]


def test_disk_raster_area():
    raster = cs.rasterize_disk(128)
    area = raster.mask.sum() * raster.pixel ** 2
    assert area == pytest.approx(math.pi, rel=0.03)
    assert np.allclose(np.abs(cs.boundary_points(raster)), 1.0)


def test_half_plane_to_disk():
    assert complex(cs.half_plane_to_disk(0.0)) == pytest.approx(-1j)
    assert abs(complex(cs.half_plane_to_disk(2j, scale=2.0))) < 1e-12
    assert complex(cs.half_plane_to_disk(1e9j)) == pytest.approx(1j, abs=1e-6)


def test_curve_complement_picks_left_half():
    curve = 1j * np.linspace(-1.0, 1.0, 50)
    raster = cs.rasterize_curve_complement(curve, 64)
    centres = raster.pixel_centres()[raster.mask]
    assert centres.size > 0
    assert np.all(centres.real < 0)

    trace = 1j * np.linspace(0.0, 4.0, 100)
    sle = cs.rasterize_sle4_left_domain(trace, 64)
    assert sle.name == "sle4_left"
    assert np.all(sle.pixel_centres()[sle.mask].real < 0)


def test_raster_round_trip(tmp_path):
    raster = cs.rasterize_square(32)
    path = cs.save_raster(raster, tmp_path / "square.bin")
    loaded = cs.load_raster(path)
    assert np.array_equal(loaded.mask, raster.mask)
    assert loaded.extent == pytest.approx(raster.extent)
    assert cs.boundary_points(loaded).size > 0

    pgm = cs.load_raster(cs.save_raster(raster, tmp_path / "square.pgm", fmt="pgm"))
    assert np.array_equal(pgm.mask, raster.mask)
    assert pgm.name == "square"
    with pytest.raises(InvalidParameterError):
        cs.save_raster(raster, tmp_path / "square.txt", fmt="txt")
