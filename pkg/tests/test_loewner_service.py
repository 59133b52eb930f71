import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.models.loewner import ForcePoint
from app.services import loewner_service as ls
from app.services import stochastic_service as ss
from app.utils.errors import InvalidParameterError
from app.utils.stats_utils import is_monotone, l1_density_distance


def test_dimension_and_phases():
    assert ls.sle_dimension(4.0) == pytest.approx(1.5)
    assert ls.sle_dimension(8.0) == 2.0
    assert ls.sle_dimension(12.0) == 2.0
    assert ls.sle_rho_phase(4.0, -1.0) == "hits_boundary"
    assert ls.sle_rho_phase(4.0, 2.0) == "avoids_boundary"
    assert ls.sle_rho_phase(4.0, -2.0) == "continuation_threshold"


def test_zero_driving_forward_flow_matches_closed_form():
    """W = 0 gives g_t(z) = sqrt(z^2 + 4t)."""
    driving = ls.constant_driving(0.0, 1e-3, 1.0)
    z = 1 + 1j
    result = ls.evolve_point(driving, z, 1.0)
    assert not result.swallowed
    assert abs(result.value - np.sqrt(z * z + 4.0)) < 1e-6


def test_zero_driving_reverse_flow_matches_closed_form():
    """W = 0 gives f_t(z) = sqrt(z^2 - 4t) in the upper half-plane."""
    driving = ls.constant_driving(0.0, 1e-3, 1.0)
    z = 1 + 1j
    value = ls.evolve_reverse(driving, z, 1.0)
    assert abs(value - np.sqrt(z * z - 4.0)) < 1e-6
    assert value.imag > 0


def test_flow_rejects_points_off_the_half_plane():
    driving = ls.constant_driving(0.0, 1e-3, 1.0)
    with pytest.raises(InvalidParameterError):
        ls.evolve_point(driving, 1.0 - 0.5j, 0.5)
    with pytest.raises(InvalidParameterError):
        ls.evolve_point(driving, 1.0 + 1j, 2.0)


def test_reverse_flow_inverts_forward_flow():
    """Reverse flow with W_{T-s} - W_T undoes g_T up to the shift W_T."""
    driving = ls.driving_from_function(lambda t: np.sin(3.0 * t), 1e-4, 0.5)
    z0 = 0.3 + 0.8j
    forward = ls.evolve_point(driving, z0, 0.5).value
    back = ls.evolve_reverse(ls.time_reversed(driving), forward - driving.W[-1], 0.5)
    assert abs(back - (z0 - driving.W[-1])) < 1e-5


def test_zero_driving_trace_is_vertical_slit():
    driving = ls.constant_driving(0.0, 1e-3, 0.25)
    trace = ls.extract_trace(driving)
    assert np.allclose(trace.points.real, 0.0, atol=1e-9)
    assert np.allclose(trace.points.imag, 2.0 * np.sqrt(trace.times), atol=1e-9)


def test_vertical_slit_capacity():
    slit = 1j * np.linspace(0.0, 1.0, 50)
    assert ls.hull_capacity(slit) == pytest.approx(0.5, abs=1e-12)
    assert ls.hull_capacity_richardson(slit) == pytest.approx(0.5, abs=1e-6)
    assert ls.hull_capacity(np.array([0.0, 1.0, 2.0])) == 0.0


def test_trace_capacity_and_height_bound():
    """Capacity of an extracted trace is 2T and dominates sup Im^2 / 2."""
    driving = ls.generate_driving("sle", 2.0, dt=1e-3, T=0.2, seed=1)
    trace = ls.extract_trace(driving)
    hcap = ls.hull_capacity(trace)
    assert hcap == pytest.approx(0.4, rel=1e-4)
    assert hcap >= ls.sup_imaginary(trace) ** 2 / 2 - 1e-12
    assert np.all(trace.points.imag >= 0)


def test_sle_driving_is_deterministic():
    a = ls.generate_driving("sle", 4.0, dt=1e-3, T=0.1, seed=3, replicate=2)
    b = ls.generate_driving("sle", 4.0, dt=1e-3, T=0.1, seed=3, replicate=2)
    c = ls.generate_driving("sle", 4.0, dt=1e-3, T=0.1, seed=3, replicate=1)
    assert np.array_equal(a.W, b.W)
    assert not np.array_equal(a.W, c.W)
    assert a.W[0] == 0.0


def test_force_point_stays_on_its_side():
    driving = ls.generate_driving(
        "sle_rho", 4.0, rho=[ForcePoint(weight=2.0, side="right", x0=0.0)], dt=1e-3, T=0.5, seed=2
    )
    fp = driving.forcepoints[0].values
    assert np.all(fp - driving.W >= -1e-12)
    assert not driving.truncated


def test_force_point_weight_below_threshold_rejected():
    with pytest.raises(InvalidParameterError):
        ls.generate_driving("sle_rho", 4.0, rho=-3.0, dt=1e-3, T=0.1)
    with pytest.raises(InvalidParameterError):
        ls.generate_driving("sle_rho", 4.0, rho=[], dt=1e-3, T=0.1)
    with pytest.raises(InvalidParameterError):
        ls.generate_driving("bogus", 4.0)


def test_whole_plane_driving_lives_on_circle():
    driving = ls.generate_driving("whole_plane_rho", 2.0, rho=2.0, dt=1e-3, T=0.5, seed=4, r0=1e-3)
    assert np.allclose(np.abs(driving.W), 1.0)
    assert driving.t0 == pytest.approx(math.log(1e-3))
    trace = ls.extract_whole_plane_trace(driving)
    assert abs(trace.points[0]) == pytest.approx(1e-3)


def test_constant_whole_plane_flow_is_koebe():
    """With W = 1 the flow satisfies k(g_t(z)) = e^t k(z)."""
    driving = ls.constant_driving(1.0 + 0j, 1e-3, 0.5, scheme="whole_plane_rho")
    z = -2.0 + 0.5j
    result = ls.evolve_whole_plane(driving, z)
    assert abs(ls.koebe(result.value) - math.exp(0.5) * ls.koebe(z)) < 1e-6


def test_constant_whole_plane_trace_is_radial_slit():
    driving = ls.constant_driving(1.0 + 0j, 1e-3, 0.5, scheme="whole_plane_rho")
    trace = ls.extract_whole_plane_trace(driving)
    assert np.allclose(trace.points.imag, 0.0, atol=1e-9)
    assert np.all(np.diff(np.abs(trace.points)) > 0)


def test_radial_derivative_at_origin():
    """g_t'(0) = e^t for the radial chain."""
    driving = ls.constant_driving(1.0 + 0j, 1e-3, 0.5, scheme="whole_plane_rho")
    assert ls.radial_log_derivative_at_zero(driving, 0.3) == pytest.approx(0.3, abs=1e-4)
    with pytest.raises(InvalidParameterError):
        ls.evolve_radial(driving, 1.5 + 0j, 0.1)


def test_unzipper_round_trip():
    s = np.linspace(0.0, 1.0, 40)
    curve = s * (1 + 1j) + 0.1j * np.sin(np.pi * s)
    unzipper = ls.CurveUnzipper(curve)
    z = np.array([2 + 0.5j, -1 - 1j, 0.5 - 0.3j, -0.2 + 1.5j])
    w = unzipper.forward(z)
    assert np.all(w.imag > 0)
    assert np.allclose(unzipper.inverse(w), z, atol=1e-8)
    assert abs(unzipper.forward(curve[0])[0]) < 1e-5
    assert np.allclose(ls.map_out_curve(curve, z), w)


def test_unzipper_needs_three_points():
    with pytest.raises(InvalidParameterError):
        ls.CurveUnzipper(np.array([0.0, 1j]))


def test_trace_geometry_helpers():
    line = np.linspace(0.0, 1.0, 2001).astype(complex)
    dim = ls.box_counting_dimension(line)
    assert dim["dimension"] == pytest.approx(1.0, abs=0.05)

    pts = 0.1 * np.arange(10).astype(complex)
    assert ls.min_nonadjacent_distance(pts) == pytest.approx(0.3)
    trace = ls.extract_trace(ls.constant_driving(0.0, 1e-2, 0.04))
    assert ls.max_step_displacement(trace) == pytest.approx(0.2)


@pytest.mark.parametrize("dt", [1e-3, 1e-4])
def test_zero_driving_swallows_i_at_one_quarter(dt):
    """W = 0 swallows z = i when z^2 + 4t = 0."""
    driving = ls.constant_driving(0.0, dt, 1.0)
    result = ls.evolve_point(driving, 1j, 1.0)
    assert result.swallowed
    assert result.swallow_time == pytest.approx(0.25, abs=1e-4)


def test_sle_driving_variance_at_time_one():
    """W_1 = sqrt(kappa) B_1, so Var[W_1] = kappa."""
    kappa, reps = 4.0, 2000
    ends = np.array([ls.generate_driving("sle", kappa, dt=1e-2, T=1.0, seed=7, replicate=r).W[-1] for r in range(reps)])
    sigma = kappa * math.sqrt(2.0 / (reps - 1))
    assert abs(ends.var(ddof=1) - kappa) < 4 * sigma


def test_force_point_follows_loewner_flow():
    """The force point solves dV = 2 / (V - W) dt along the sampled W."""
    dt = 1e-4
    driving = ls.generate_driving(
        "sle_rho", 2.0, rho=[ForcePoint(weight=2.0, side="right", x0=1.0)], dt=dt, T=0.25, seed=5
    )
    W = driving.W
    V = driving.forcepoints[0].values
    assert np.allclose(np.diff(V), 2.0 * dt / (V[1:] - W[1:]), rtol=1e-9, atol=1e-12)

    # 同じ W で陽的 Euler
    euler = np.empty_like(V)
    euler[0] = 1.0
    for k in range(W.size - 1):
        euler[k + 1] = euler[k] + 2.0 * dt / (euler[k] - W[k])
    assert abs(euler[-1] - V[-1]) < 2e-2


def test_whole_plane_angle_is_stationary():
    """theta = arg W - arg O keeps the stationary law c_a sin^{2a}(theta / 2)."""
    kappa, rho = 2.0, 2.0
    a = (rho + 2.0) / kappa
    halves = []
    for r in range(20):
        driving = ls.generate_driving("whole_plane_rho", kappa, rho=rho, dt=1e-2, T=20.0, seed=9, replicate=r)
        theta = np.mod(np.angle(driving.W / driving.O), 2.0 * np.pi)
        halves.append(theta / 2.0)
    samples = np.concatenate(halves)
    dist = l1_density_distance(samples, lambda y: ss.radial_bessel_stationary_density(a, y), 0.0, np.pi, bins=10)
    assert dist < 0.3


def _mean_dimension(kappa: float) -> float:
    dims = []
    for seed in (1, 2):
        trace = ls.extract_trace(ls.generate_driving("sle", kappa, dt=2.0 ** -14, T=1.0, seed=seed))
        dims.append(ls.box_counting_dimension(trace.points)["dimension"])
    return float(np.mean(dims))


def test_box_counting_dimension_of_sle_traces():
    """d_kappa = 1 + kappa / 8: 1.25 for kappa = 2, 1.75 for kappa = 6."""
    low = _mean_dimension(2.0)
    high = _mean_dimension(6.0)
    assert low == pytest.approx(1.25, abs=0.15)
    assert high == pytest.approx(1.75, abs=0.2)
    assert high > low + 0.2

    simple = ls.extract_trace(ls.generate_driving("sle", 2.0, dt=1e-3, T=0.5, seed=1))
    assert ls.min_nonadjacent_distance(simple.points) > 0


def test_whole_plane_modulus_decreases_along_the_flow():
    """With g_t(z) ~ e^{-t} z, d log|g| / dt = (1 - |g|^2) / |W - g|^2 < 0 outside the hull."""
    driving = ls.generate_driving("whole_plane_rho", 2.0, rho=2.0, dt=1e-3, T=0.5, seed=4, r0=1e-3)
    z = 0.5 + 0.2j
    times = driving.t0 + np.linspace(0.05, 0.5, 6)
    moduli = []
    for t1 in times:
        result = ls.evolve_whole_plane(driving, z, t1=float(t1))
        assert not result.swallowed
        moduli.append(abs(result.value))
    assert is_monotone(moduli, increasing=False)
    assert min(moduli) > 1.0


def test_richardson_capacity_of_random_trace():
    """The extrapolated 1/z coefficient of the composed map is hcap = 2T."""
    trace = ls.extract_trace(ls.generate_driving("sle", 3.0, dt=1e-3, T=0.5, seed=2))
    assert ls.hull_capacity_richardson(trace) == pytest.approx(1.0, rel=2e-3)
    assert ls.hull_capacity_richardson(trace) == pytest.approx(ls.hull_capacity(trace), rel=1e-3)
