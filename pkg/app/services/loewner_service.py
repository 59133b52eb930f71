"""Loewner chain ソルバーと SLE 駆動関数"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from app.config import settings
from app.models.loewner import DrivingFunction, FlowResult, ForcePoint, ForcePointPath, Trace
from app.services import stochastic_service
from app.utils import rng_utils
from app.utils.errors import InvalidParameterError, LoewnerInstabilityError, require_positive

logger = logging.getLogger(__name__)


def sle_dimension(kappa: float) -> float:
    require_positive(kappa=kappa)
    return min(2.0, 1.0 + kappa / 8.0)


def sle_rho_phase(kappa: float, rho: float) -> str:
    """force point 1つの場合の境界との交わり方"""
    require_positive(kappa=kappa)
    if rho <= -2:
        return "continuation_threshold"
    if rho < kappa / 2 - 2:
        return "hits_boundary"
    return "avoids_boundary"


# ---------------------------------------------------------------------------
# driving functions

def _normals(seed: int, replicate: int, stream: int, n: int) -> np.ndarray:
    return rng_utils.keyed_generator(seed, replicate, stream).standard_normal(n)


def _as_force_points(rho) -> List[ForcePoint]:
    if rho is None:
        return []
    if isinstance(rho, (int, float, ForcePoint, dict)):
        rho = [rho]
    points = []
    for item in rho:
        if isinstance(item, ForcePoint):
            points.append(item)
        elif isinstance(item, dict):
            points.append(ForcePoint(**item))
        else:
            # 数値だけなら 0+ の右側 force point
            points.append(ForcePoint(weight=float(item), side="right", x0=0.0))
    return points


def _gap_step(gap: float, dB: float, a_eff: float, extra: float, dt: float) -> float:
    """Bessel 型ギャップの陰的・反射ステップ（gap は sqrt(kappa) で割った値）"""
    y = gap + dB + extra * dt
    return 0.5 * (abs(y) + math.sqrt(y * y + 4.0 * max(a_eff, 0.0) * dt))


def _generate_sle_rho(kappa: float, points: List[ForcePoint], dt: float, n: int, seed: int, replicate: int):
    """右（または左）最内点のギャップを Bessel として陰的に解き、外側の点は陽的に進める"""
    sk = math.sqrt(kappa)
    noise = math.sqrt(dt) * _normals(seed, replicate, rng_utils.DRIVING, n)

    right = sorted([i for i, p in enumerate(points) if p.side == "right"], key=lambda i: points[i].x0)
    left = sorted([i for i, p in enumerate(points) if p.side == "left"], key=lambda i: -points[i].x0)

    W = np.empty(n + 1)
    V = np.empty((len(points), n + 1))
    W[0] = 0.0
    for i, p in enumerate(points):
        V[i, 0] = p.x0

    # クラスタ: 各側で W に張り付いた点の集合
    cluster = {"right": [right[0]] if right else [], "left": [left[0]] if left else []}
    merge_tol = math.sqrt(kappa * dt)
    truncated_at: Optional[int] = None

    def cluster_weight(side):
        return sum(points[i].weight for i in cluster[side])

    for side, order in (("right", right), ("left", left)):
        if order and cluster_weight(side) <= -2:
            raise InvalidParameterError("cumulative force point weight must exceed -2 initially")

    gap = {"right": (V[right[0], 0] - W[0]) / sk if right else None,
           "left": (W[0] - V[left[0], 0]) / sk if left else None}

    for k in range(n):
        w = W[k]
        db = noise[k]
        # 外側点からのドリフト（W 単位）
        outer_drift = 0.0
        for side in ("right", "left"):
            order = right if side == "right" else left
            for i in order:
                if i in cluster[side]:
                    continue
                diff = w - V[i, k]
                outer_drift += points[i].weight / (diff if abs(diff) > merge_tol else math.copysign(merge_tol, diff))

        new_gap = {}
        for side, sign in (("right", 1.0), ("left", -1.0)):
            if gap[side] is None:
                continue
            rho_c = cluster_weight(side)
            a_eff = (2.0 + rho_c) / kappa
            # 反対側クラスタの寄与
            other = "left" if side == "right" else "right"
            cross = 0.0
            if gap[other] is not None:
                g_other = max(gap[other] * sk, math.sqrt(dt))
                cross = -cluster_weight(other) / g_other
            # d gap = ... - sign * sqrt(kappa) dB
            extra = (-sign * outer_drift + cross) / sk
            new_gap[side] = _gap_step(gap[side], -sign * db, a_eff, extra, dt)

        if right:
            anchor = cluster["right"][0]
            g_r = new_gap["right"] * sk
            v_new = V[anchor, k] + 2.0 * dt / max(g_r, 1e-300)
            W[k + 1] = v_new - g_r
            for i in cluster["right"]:
                V[i, k + 1] = v_new
            if left:
                v_left = W[k + 1] - new_gap["left"] * sk
                for i in cluster["left"]:
                    V[i, k + 1] = v_left
        elif left:
            anchor = cluster["left"][0]
            g_l = new_gap["left"] * sk
            v_new = V[anchor, k] - 2.0 * dt / max(g_l, 1e-300)
            W[k + 1] = v_new + g_l
            for i in cluster["left"]:
                V[i, k + 1] = v_new
        else:
            W[k + 1] = w + sk * db

        # 外側の点は陽的 Euler、順序は累積 max/min で保つ
        for side, order in (("right", right), ("left", left)):
            prev = W[k + 1]
            for i in order:
                if i not in cluster[side]:
                    diff = V[i, k] - W[k]
                    step = 2.0 * dt / (diff if abs(diff) > merge_tol else math.copysign(merge_tol, diff))
                    V[i, k + 1] = V[i, k] + step
                if side == "right":
                    V[i, k + 1] = max(V[i, k + 1], prev)
                else:
                    V[i, k + 1] = min(V[i, k + 1], prev)
                prev = V[i, k + 1]

        for side, order in (("right", right), ("left", left)):
            if not order:
                continue
            gap[side] = new_gap[side]
            anchor_v = V[cluster[side][0], k + 1]
            for i in order:
                if i in cluster[side]:
                    continue
                if abs(V[i, k + 1] - W[k + 1]) < merge_tol:
                    cluster[side].append(i)
                    V[i, k + 1] = anchor_v
                    if cluster_weight(side) <= -2:
                        truncated_at = k + 1
            if truncated_at is not None:
                break
        if truncated_at is not None:
            break

    end = n if truncated_at is None else truncated_at
    paths = [
        ForcePointPath(weight=p.weight, side=p.side, values=V[i, :end + 1].copy())
        for i, p in enumerate(points)
    ]
    return W[:end + 1].copy(), paths, truncated_at


def _generate_whole_plane(kappa: float, rho: float, dt: float, n: int, seed: int, replicate: int):
    a = (rho + 2.0) / kappa
    if a <= -0.5:
        raise InvalidParameterError("whole-plane pair needs (rho + 2) / kappa > -1/2")
    ds = kappa * dt / 4.0
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.DRIVING)
    w0 = rng.uniform(0.0, 2.0 * np.pi)
    y0 = float(stochastic_service.sample_radial_bessel_stationary(a, 1, seed=seed, replicate=replicate)[0])
    y0 = min(max(y0, 1e-6), np.pi - 1e-6)
    z = rng.standard_normal(n)
    delta0 = settings.BESSEL_DELTA0

    Y = np.empty(n + 1)
    o = np.empty(n + 1)
    Y[0], o[0] = y0, w0 - 2.0 * y0
    for k in range(n):
        y_new, _ = stochastic_service._radial_step(np.array([Y[k]]), np.array([math.sqrt(ds) * z[k]]), a, ds, delta0)
        Y[k + 1] = y_new[0]
        mid = 0.5 * (Y[k] + Y[k + 1])
        mid = min(max(mid, math.sqrt(ds)), np.pi - math.sqrt(ds))
        o[k + 1] = o[k] - dt / math.tan(mid)
    w = o + 2.0 * Y
    return np.exp(1j * w), np.exp(1j * o), Y


def _generate_reverse(kappa: float, dt: float, n: int, seed: int, replicate: int):
    """reverse SLE_kappa(kappa): Q = V - W、最初の1歩は Q = 2i sqrt(dt)"""
    sk = math.sqrt(kappa)
    noise = math.sqrt(dt) * _normals(seed, replicate, rng_utils.DRIVING, n)
    W = np.empty(n + 1)
    Vh = np.empty(n + 1, dtype=complex)
    W[0], Vh[0] = 0.0, 0.0
    W[1] = sk * noise[0]
    Vh[1] = W[1] + 2j * math.sqrt(dt)
    for k in range(1, n):
        q = Vh[k] - W[k]
        dw = sk * noise[k] - (kappa / q).real * dt
        W[k + 1] = W[k] + dw
        Vh[k + 1] = Vh[k] - 2.0 / q * dt
    return W, Vh


def generate_driving(
    scheme: str,
    kappa: float,
    rho=None,
    dt: float = 1e-3,
    T: float = 1.0,
    seed: int = 0,
    replicate: int = 0,
    r0: Optional[float] = None,
) -> DrivingFunction:
    require_positive(kappa=kappa, dt=dt, T=T)
    n = stochastic_service._n_steps(dt, T)
    if scheme == "sle":
        B = np.concatenate([[0.0], np.cumsum(math.sqrt(dt) * _normals(seed, replicate, rng_utils.DRIVING, n))])
        return DrivingFunction(dt=dt, W=math.sqrt(kappa) * B, kappa=kappa, scheme="sle", seed=seed, replicate=replicate)

    if scheme == "sle_rho":
        points = _as_force_points(rho)
        if not points:
            raise InvalidParameterError("sle_rho needs at least one force point")
        W, paths, truncated_at = _generate_sle_rho(kappa, points, dt, n, seed, replicate)
        if truncated_at is not None:
            logger.warning(f"continuation threshold reached at t={truncated_at * dt:.6f}; driving truncated")
        return DrivingFunction(
            dt=dt, W=W, kappa=kappa, scheme="sle_rho", seed=seed, replicate=replicate,
            forcepoints=paths,
            truncated=truncated_at is not None,
            truncation_time=truncated_at * dt if truncated_at is not None else None,
        )

    if scheme == "whole_plane_rho":
        weights = [p.weight for p in _as_force_points(rho)] if rho is not None else [2.0]
        if len(weights) != 1:
            raise InvalidParameterError("whole_plane_rho takes a single interior weight")
        r0 = settings.WHOLE_PLANE_R0 if r0 is None else r0
        require_positive(r0=r0)
        t0 = math.log(r0)
        W, O, _ = _generate_whole_plane(kappa, weights[0], dt, n, seed, replicate)
        return DrivingFunction(dt=dt, W=W, O=O, kappa=kappa, scheme="whole_plane_rho", seed=seed,
                               replicate=replicate, t0=t0)

    if scheme == "reverse_sle_kappa":
        W, Vh = _generate_reverse(kappa, dt, n, seed, replicate)
        return DrivingFunction(
            dt=dt, W=W, kappa=kappa, scheme="reverse_sle_kappa", seed=seed, replicate=replicate,
            forcepoints=[ForcePointPath(weight=kappa, side="interior", values=Vh)],
        )

    raise InvalidParameterError(f"unknown driving scheme: {scheme}")


def constant_driving(value: float | complex, dt: float, T: float, scheme: str = "sle", kappa: float = 1.0) -> DrivingFunction:
    """確定的な定数駆動（テスト・オラクル用）"""
    n = stochastic_service._n_steps(dt, T)
    W = np.full(n + 1, value)
    if scheme == "whole_plane_rho":
        return DrivingFunction(dt=dt, W=W.astype(complex), O=W.astype(complex), kappa=kappa, scheme=scheme)
    return DrivingFunction(dt=dt, W=W.astype(float), kappa=kappa, scheme=scheme)


def driving_from_function(fn, dt: float, T: float, kappa: float = 1.0) -> DrivingFunction:
    n = stochastic_service._n_steps(dt, T)
    t = dt * np.arange(n + 1)
    return DrivingFunction(dt=dt, W=np.asarray(fn(t), dtype=float), kappa=kappa, scheme="sle")


def time_reversed(driving: DrivingFunction) -> DrivingFunction:
    """s -> W_{T-s} - W_T"""
    W = driving.W[::-1] - driving.W[-1]
    return DrivingFunction(dt=driving.dt, W=W.copy(), kappa=driving.kappa, scheme="reverse_sle_kappa",
                           seed=driving.seed, replicate=driving.replicate)


def sample_theta_process(kappa: float, ds: float, S: float, seed: int = 0, replicate: int = 0,
                         theta0: float = np.pi / 2) -> np.ndarray:
    """d theta = sqrt(kappa) sin(theta) dB + 2 sin(2 theta) ds（不変密度 sin^{8/kappa-2}）"""
    require_positive(kappa=kappa)
    n = stochastic_service._n_steps(ds, S)
    z = _normals(seed, replicate, rng_utils.DRIVING, n)
    theta = np.empty(n + 1)
    theta[0] = theta0
    lo, hi = settings.BESSEL_DELTA0, np.pi - settings.BESSEL_DELTA0
    sk, sq = math.sqrt(kappa), math.sqrt(ds)
    for k in range(n):
        th = theta[k]
        nxt = th + sk * math.sin(th) * sq * z[k] + 2.0 * math.sin(2.0 * th) * ds
        theta[k + 1] = min(max(nxt, lo), hi)
    return theta


# ---------------------------------------------------------------------------
# chordal forward flow

def _interp_driving(driving: DrivingFunction, t: float):
    W = driving.W
    pos = (t - driving.t0) / driving.dt
    k = min(max(int(math.floor(pos)), 0), W.shape[0] - 2)
    frac = min(max(pos - k, 0.0), 1.0)
    if np.iscomplexobj(W):
        # 単位円上は偏角で補間
        return W[k] * np.exp(1j * frac * np.angle(W[k + 1] / W[k]))
    return float(W[k] + frac * (W[k + 1] - W[k]))


def _rk4(f, t: float, g: complex, h: float) -> complex:
    k1 = f(t, g)
    k2 = f(t + h / 2, g + h / 2 * k1)
    k3 = f(t + h / 2, g + h / 2 * k2)
    k4 = f(t + h, g + h * k3)
    return g + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(driving: DrivingFunction, z: complex, t_start: float, t_end: float, field, gap, swallow_tol: float) -> FlowResult:
    """RK4、|g - W| < 10 sqrt(dt) では刻みを縮める"""
    dt = driving.dt
    near = 10.0 * math.sqrt(dt)
    min_h = dt * 2.0 ** (-settings.MAX_HALVINGS)
    # 刻み 0.1 dist^2 が min_h を割る距離までは吸収とみなす
    if swallow_tol > 0:
        swallow_tol = max(swallow_tol, math.sqrt(10.0 * min_h))
    t, g = t_start, complex(z)
    while t < t_end - 1e-15:
        w = _interp_driving(driving, t)
        dist = gap(g, w)
        if dist < swallow_tol:
            return FlowResult(swallowed=True, swallow_time=t)
        k_next = math.floor((t - driving.t0) / dt + 1e-9) + 1
        t_grid = min(driving.t0 + k_next * dt, t_end)
        h = t_grid - t
        if dist < near:
            cap = 0.1 * dist * dist
            h = min(h, cap)
            if cap < min_h:
                raise LoewnerInstabilityError(
                    f"step underflow at t={t:.6g}, |g-W|={dist:.3g}", t=t, z=z
                )
        g_new = _rk4(field, t, g, h)
        if not np.isfinite(g_new):
            raise LoewnerInstabilityError(f"non-finite flow value at t={t:.6g}", t=t, z=z)
        t, g = t + h, g_new
    w = _interp_driving(driving, t)
    if gap(g, w) < swallow_tol:
        return FlowResult(swallowed=True, swallow_time=t)
    return FlowResult(value=g)


def evolve_point(driving: DrivingFunction, z: complex, t_end: float) -> FlowResult:
    """chordal: dg/dt = 2 / (g - W_t)"""
    if driving.scheme == "whole_plane_rho":
        raise InvalidParameterError("use evolve_whole_plane for whole-plane drivings")
    if not z.imag > 0:
        raise InvalidParameterError("evolve_point needs Im(z) > 0")
    if t_end > driving.horizon + 1e-12:
        raise InvalidParameterError("t_end exceeds the driving horizon")

    def field(t, g):
        return 2.0 / (g - _interp_driving(driving, t))

    return _integrate(driving, z, driving.t0, t_end, field, lambda g, w: abs(g - w), settings.SWALLOW_TOL)


def evolve_reverse(driving: DrivingFunction, z: complex, t: float) -> complex:
    """reverse: dg/dt = -2 / (g - W_t)、Im(g) は増加するので吸収は起きない"""
    if driving.scheme not in ("reverse_sle_kappa", "sle"):
        raise InvalidParameterError("evolve_reverse needs a chordal (reverse) driving")
    if z.imag < 0:
        raise InvalidParameterError("evolve_reverse needs Im(z) >= 0")
    if t > driving.horizon + 1e-12:
        raise InvalidParameterError("t exceeds the driving horizon")

    def field(s, g):
        return -2.0 / (g - _interp_driving(driving, s))

    start = complex(z)
    w0 = _interp_driving(driving, driving.t0)
    if abs(start - w0) < 1e-14:
        # 駆動点そのものは最初の1歩を厳密解で
        h = min(driving.dt, t)
        start = w0 + 2j * math.sqrt(h)
        result = _integrate(driving, start, driving.t0 + h, t, field, lambda g, w: math.inf, 0.0)
    else:
        result = _integrate(driving, start, driving.t0, t, field, lambda g, w: math.inf, 0.0)
    return complex(result.value)


# ---------------------------------------------------------------------------
# slit maps

def _upper_sqrt(u: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Im >= 0 の枝。実数のときは ref の実部の符号に合わせる"""
    s = np.sqrt(u)
    flip = (s.imag < 0) | ((s.imag == 0) & (np.real(ref) < 0))
    return np.where(flip, -s, s)


def _vertical_slit_inverse(w: np.ndarray, x: float, dt: float) -> np.ndarray:
    d = w - x
    return x + _upper_sqrt(d * d - 4.0 * dt, d)


def extract_trace(driving: DrivingFunction) -> Trace:
    """区間ごとに駆動を凍結した縦スリット写像の合成で先端を求める"""
    if driving.scheme == "whole_plane_rho":
        raise InvalidParameterError("extract_trace is chordal; use extract_whole_plane_trace")
    W = np.asarray(driving.W, dtype=float)
    n = W.size - 1
    dt = driving.dt
    tips = W[:-1] + 2j * math.sqrt(dt)  # tip_n (n=1..N) の初期値
    for k in range(n - 1, 0, -1):
        # phi_k^{-1} を tip_{k+1}.. に適用
        tips[k:] = _vertical_slit_inverse(tips[k:], W[k - 1], dt)
    points = np.concatenate([[complex(W[0])], tips])
    points = points.real + 1j * np.maximum(points.imag, 0.0)
    return Trace(points=points, times=driving.t0 + dt * np.arange(n + 1), parameterization="capacity")


def _slit_coefficients(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """点列を縦スリット zipper で順に写し、各スリットの (x, y) を返す"""
    z = np.asarray(points, dtype=complex).copy()
    z = z.real + 1j * np.maximum(z.imag, 0.0)
    m = z.size
    xs = np.empty(m)
    ys = np.empty(m)
    for k in range(m):
        x, y = z[k].real, max(z[k].imag, 0.0)
        xs[k], ys[k] = x, y
        if k + 1 < m and y > 0:
            d = z[k + 1:] - x
            z[k + 1:] = x + _upper_sqrt(d * d + y * y, d)
            z[k + 1:] = z[k + 1:].real + 1j * np.maximum(z[k + 1:].imag, 0.0)
    return xs, ys, z


def hull_capacity(points_or_trace) -> float:
    """hcap: 各スリット写像 z + (y^2/2)/z + ... の 1/z 係数の和"""
    pts = points_or_trace.points if isinstance(points_or_trace, Trace) else np.atleast_1d(points_or_trace)
    pts = np.asarray(pts, dtype=complex)
    if pts.size == 0 or not np.any(pts.imag > 0):
        return 0.0
    _, ys, _ = _slit_coefficients(pts)
    return float(0.5 * np.sum(ys * ys))


def _apply_slit_maps(z: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    out = np.asarray(z, dtype=complex).copy()
    for x, y in zip(xs, ys):
        if y > 0:
            d = out - x
            out = x + _upper_sqrt(d * d + y * y, d)
    return out


def hull_capacity_richardson(points_or_trace, radii: Sequence[float] = (20.0, 40.0, 80.0)) -> float:
    """合成写像を iR で評価して Re[z(g(z) - z)] = a + b/R + c/R^2 を外挿"""
    pts = points_or_trace.points if isinstance(points_or_trace, Trace) else np.atleast_1d(points_or_trace)
    pts = np.asarray(pts, dtype=complex)
    if pts.size == 0 or not np.any(pts.imag > 0):
        return 0.0
    xs, ys, _ = _slit_coefficients(pts)
    scale = max(1.0, float(np.max(np.abs(pts))))
    R = np.asarray(radii, dtype=float) * scale
    zs = 1j * R
    g = _apply_slit_maps(zs, xs, ys)
    c = (zs * (g - zs)).real
    design = np.column_stack([np.ones_like(R), 1.0 / R, 1.0 / R ** 2])
    coef = np.linalg.solve(design, c)
    return float(coef[0])


def sup_imaginary(points_or_trace) -> float:
    pts = points_or_trace.points if isinstance(points_or_trace, Trace) else np.atleast_1d(points_or_trace)
    return float(np.max(np.asarray(pts).imag)) if np.size(pts) else 0.0


# ---------------------------------------------------------------------------
# whole-plane / radial

def _loewner_radial_field(driving: DrivingFunction):
    def field(t, g):
        w = _interp_driving(driving, t)
        return g * (w + g) / (w - g)
    return field


def evolve_whole_plane(driving: DrivingFunction, z: complex, t0: Optional[float] = None, t1: Optional[float] = None) -> FlowResult:
    """dg/dt = g (W + g) / (W - g)、g_{t0}(z) = e^{-t0} z から t1 まで"""
    if driving.scheme != "whole_plane_rho":
        raise InvalidParameterError("evolve_whole_plane needs a whole_plane_rho driving")
    t0 = driving.t0 if t0 is None else t0
    t1 = driving.horizon if t1 is None else t1
    if t1 > driving.horizon + 1e-12 or t0 < driving.t0 - 1e-12:
        raise InvalidParameterError("[t0, t1] must lie inside the driving horizon")
    start = complex(z) * math.exp(-t0)
    if abs(start) <= 1.0:
        raise InvalidParameterError("z lies inside the initial hull")
    return _integrate(driving, start, t0, t1, _loewner_radial_field(driving),
                      lambda g, w: abs(g - w), settings.SWALLOW_TOL)


def evolve_radial(driving: DrivingFunction, z: complex, t: float) -> FlowResult:
    """単位円板内の radial Loewner（g_t(0)=0, g_t'(0)=e^t）"""
    if abs(z) >= 1:
        raise InvalidParameterError("radial chain acts on the unit disk")
    if t > driving.horizon - driving.t0 + 1e-12:
        raise InvalidParameterError("t exceeds the driving horizon")
    shifted = driving.model_copy(update={"t0": 0.0})
    if shifted.scheme != "whole_plane_rho":
        raise InvalidParameterError("radial chain needs a circle-valued driving")
    return _integrate(shifted, complex(z), 0.0, t, _loewner_radial_field(shifted),
                      lambda g, w: abs(g - w), settings.SWALLOW_TOL)


def radial_log_derivative_at_zero(driving: DrivingFunction, t: float, h: float = 1e-4) -> float:
    """log g_t'(0) を中心差分で"""
    plus = evolve_radial(driving, complex(h), t)
    minus = evolve_radial(driving, complex(-h), t)
    if plus.swallowed or minus.swallowed:
        raise LoewnerInstabilityError("origin neighbourhood swallowed", t=t)
    deriv = (plus.value - minus.value) / (2 * h)
    return float(math.log(abs(deriv)))


def koebe(z):
    return z / (1 + z) ** 2


def _whole_plane_slit_inverse(w: np.ndarray, W: complex, dt: float) -> np.ndarray:
    """k(z/W) = e^{-dt} k(w/W) の |z| >= 1 側の根"""
    c = math.exp(-dt) * koebe(w / W)
    disc = np.sqrt(1 - 4 * c)
    r1 = ((1 - 2 * c) + disc) / (2 * c)
    r2 = ((1 - 2 * c) - disc) / (2 * c)
    u = np.where(np.abs(r1) >= np.abs(r2), r1, r2)
    return W * u


def extract_whole_plane_trace(driving: DrivingFunction) -> Trace:
    """半径 r0 の初期ハルから成長する whole-plane 曲線"""
    if driving.scheme != "whole_plane_rho":
        raise InvalidParameterError("extract_whole_plane_trace needs a whole_plane_rho driving")
    W = np.asarray(driving.W, dtype=complex)
    n = W.size - 1
    dt = driving.dt
    c_tip = math.exp(-dt) / 4.0
    u_tip = ((1 - 2 * c_tip) + math.sqrt(1 - 4 * c_tip)) / (2 * c_tip)
    tips = W[:-1] * u_tip
    for k in range(n - 1, 0, -1):
        tips[k:] = _whole_plane_slit_inverse(tips[k:], W[k - 1], dt)
    r0 = math.exp(driving.t0)
    points = np.concatenate([[r0 * W[0]], r0 * tips])
    return Trace(points=points, times=driving.t0 + dt * np.arange(n + 1), parameterization="radial_capacity")


# ---------------------------------------------------------------------------
# mapping out a curve (zipper)

class CurveUnzipper:
    """C \\ eta を H に写す zipper（根 -> 0、遠端 -> infinity）

    遠端側から i sqrt((z - c1)/(z - c0)) で開き、残りの点を縦スリット写像で 0 に送る。
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=complex)
        if pts.size < 3:
            raise InvalidParameterError("curve needs at least three points")
        rev = pts[::-1]
        self.c0, self.c1 = complex(rev[0]), complex(rev[1])
        self.slits: list[tuple[float, float]] = []
        z = self._first(rev[2:])
        for k in range(z.size):
            x, y = z[k].real, max(z[k].imag, 0.0)
            self.slits.append((x, y))
            if k + 1 < z.size:
                d = z[k + 1:] - x
                z[k + 1:] = _upper_sqrt(d * d + y * y, d)
                z[k + 1:] = z[k + 1:].real + 1j * np.maximum(z[k + 1:].imag, 0.0)

    def _first(self, z: np.ndarray) -> np.ndarray:
        s = np.sqrt((np.asarray(z, dtype=complex) - self.c1) / (np.asarray(z, dtype=complex) - self.c0))
        s = np.where(s.real < 0, -s, s)
        return 1j * s

    def forward(self, z) -> np.ndarray:
        out = self._first(np.atleast_1d(z))
        for x, y in self.slits:
            d = out - x
            out = _upper_sqrt(d * d + y * y, d)
        return out

    def inverse(self, w) -> np.ndarray:
        out = np.atleast_1d(np.asarray(w, dtype=complex)).copy()
        for x, y in reversed(self.slits):
            out = x + _upper_sqrt(out * out - y * y, out)
        m = -(out * out)
        return (self.c1 - m * self.c0) / (1 - m)


def map_out_curve(points: np.ndarray, z) -> np.ndarray:
    return CurveUnzipper(points).forward(z)


def trace_from_uniformized(unzipper: CurveUnzipper, trace: Trace) -> np.ndarray:
    """一様化座標の chordal 曲線を元の領域に戻す"""
    pts = trace.points.copy()
    pts = pts.real + 1j * np.maximum(pts.imag, 1e-15)
    return unzipper.inverse(pts)


# ---------------------------------------------------------------------------
# geometry of traces

def box_counting_dimension(points: np.ndarray, scales: Optional[Sequence[float]] = None, densify: int = 4) -> dict:
    """占有ボックス数 N(s) ~ s^{-D} の傾き"""
    from app.utils.stats_utils import weighted_linear_fit

    pts = np.asarray(points, dtype=complex)
    if densify > 1 and pts.size > 1:
        frac = np.arange(densify) / densify
        seg = pts[:-1, None] + (pts[1:] - pts[:-1])[:, None] * frac[None, :]
        pts = np.concatenate([seg.ravel(), pts[-1:]])
    step = float(np.max(np.abs(np.diff(pts)))) if pts.size > 1 else 1.0
    span = float(max(np.ptp(pts.real), np.ptp(pts.imag)))
    if scales is None:
        lo, hi = 4.0 * step, span / 4.0
        if hi <= lo:
            raise InvalidParameterError("trace too coarse for box counting")
        scales = np.geomspace(lo, hi, 8)
    counts = []
    for s in scales:
        cells = np.column_stack([np.floor(pts.real / s), np.floor(pts.imag / s)]).astype(np.int64)
        counts.append(int(np.unique(cells, axis=0).shape[0]))
    fit = weighted_linear_fit(np.log(1.0 / np.asarray(scales)), np.log(counts))
    return {"dimension": fit["slope"], "r2": fit["r2"], "scales": list(map(float, scales)), "counts": counts}


def max_step_displacement(trace: Trace) -> float:
    return float(np.max(np.abs(np.diff(trace.points)))) if trace.points.size > 1 else 0.0


def min_nonadjacent_distance(points: np.ndarray, skip: int = 2) -> float:
    """隣接しない標本点間の最小距離（自己交差の目安）"""
    from scipy.spatial import cKDTree

    pts = np.asarray(points, dtype=complex)
    xy = np.column_stack([pts.real, pts.imag])
    tree = cKDTree(xy)
    d, idx = tree.query(xy, k=min(skip + 8, len(xy)))
    best = math.inf
    for i in range(len(xy)):
        for dist, j in zip(d[i], idx[i]):
            if abs(int(j) - i) > skip:
                best = min(best, float(dist))
                break
    return best
