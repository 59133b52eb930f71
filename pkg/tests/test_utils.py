import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.utils import io_utils, rng_utils
from app.utils.errors import InsufficientScalesError, InvalidParameterError
from app.utils.stats_utils import (
    MomentAccumulator,
    is_monotone,
    merge_in_order,
    weighted_linear_fit,
    wilson_interval,
)


def test_keyed_generators_are_independent_of_order():
    a = rng_utils.stacked_normals(1, [0, 1, 2], rng_utils.BROWNIAN, 5)
    b = rng_utils.stacked_normals(1, [2, 1, 0], rng_utils.BROWNIAN, 5)
    assert np.array_equal(a, b[::-1])
    other = rng_utils.stacked_normals(1, [0], rng_utils.BESSEL, 5)
    assert not np.array_equal(a[0], other[0])
    assert rng_utils.stacked_normals(1, [], rng_utils.BROWNIAN, 5).shape == (0, 5)


def test_derive_seed():
    assert rng_utils.derive_seed(3, 1, 2) == rng_utils.derive_seed(3, 1, 2)
    assert rng_utils.derive_seed(3, 1, 2) != rng_utils.derive_seed(3, 2, 1)
    assert 0 <= rng_utils.derive_seed(-1, 7) < 2 ** 64


def test_accumulator_merge_matches_numpy():
    rng = np.random.default_rng(0)
    values = rng.normal(size=1000)
    parts = [(i, MomentAccumulator().add(chunk)) for i, chunk in enumerate(np.array_split(values, 7))]
    total = merge_in_order(list(reversed(parts)))
    assert total.n == 1000
    assert total.mean == pytest.approx(values.mean())
    assert total.variance == pytest.approx(values.var(ddof=1))
    assert total.stderr == pytest.approx(values.std(ddof=1) / np.sqrt(1000))


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 10)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InvalidParameterError):
        wilson_interval(0, 0)


def test_weighted_fit_recovers_a_line():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    fit = weighted_linear_fit(x, 1.5 - 0.25 * x, [0.1, 0.2, 0.1, 0.3])
    assert fit["slope"] == pytest.approx(-0.25)
    assert fit["intercept"] == pytest.approx(1.5)
    assert fit["r2"] == pytest.approx(1.0)
    with pytest.raises(InsufficientScalesError):
        weighted_linear_fit([0.0, 1.0], [0.0, 1.0])


def test_is_monotone():
    assert is_monotone([1, 2, 3])
    assert not is_monotone([1, 3, 2])
    assert is_monotone([1, 3, 2.95], tol=0.1)
    assert is_monotone([3, 2, 1], increasing=False)


def test_binary_header(tmp_path):
    cols = np.arange(12.0).reshape(4, 3)
    path = io_utils.write_binary(tmp_path / "a.bin", "points", cols, 1.5, -2.0)
    assert path.read_bytes()[:8] == b"SLELAB01"
    meta, loaded = io_utils.read_binary(path)
    assert meta == {"kind": "points", "n": 4, "p1": 1.5, "p2": -2.0}
    assert np.array_equal(loaded, cols)

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTSLELB" + bytes(24))
    with pytest.raises(InvalidParameterError):
        io_utils.read_binary(bad)
    with pytest.raises(InvalidParameterError):
        io_utils.write_binary(tmp_path / "c.bin", "nope", cols, 0.0, 0.0)


def test_packed_raster_is_not_a_binary_table(tmp_path):
    mask = np.zeros((3, 5), dtype=bool)
    mask[1, 2] = True
    path = io_utils.write_packed_raster(tmp_path / "m.raster", mask, 2.0)
    loaded, extent = io_utils.read_packed_raster(path)
    assert np.array_equal(loaded, mask)
    assert extent == 2.0
    other = io_utils.write_binary(tmp_path / "p.bin", "points", np.zeros(3), 0.0, 0.0)
    with pytest.raises(InvalidParameterError):
        io_utils.read_packed_raster(other)
