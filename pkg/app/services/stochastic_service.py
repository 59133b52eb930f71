"""Brownian / Bessel / radial Bessel のシミュレータと閉形式密度"""
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, stats

from app.config import settings
from app.models.stochastic import DensitySpec, PathEnsemble, SamplePath
from app.utils import rng_utils
from app.utils.errors import InvalidParameterError, require_positive
from app.utils.io_utils import write_csv

logger = logging.getLogger(__name__)

_CHUNK = 2048


def _n_steps(dt: float, T: float) -> int:
    require_positive(dt=dt, T=T)
    if dt > T * (1 + 1e-12):
        raise InvalidParameterError(f"dt={dt} exceeds horizon T={T}")
    return max(1, int(round(T / dt)))


def _chunks(replicates: Sequence[int]):
    reps = list(replicates)
    for i in range(0, len(reps), _CHUNK):
        yield reps[i:i + _CHUNK]


# ---------------------------------------------------------------------------
# Brownian motion

def _brownian_values(rng: np.random.Generator, dim: int, n: int, dt: float, drift, x0) -> np.ndarray:
    if dim == 1:
        inc = math.sqrt(dt) * rng.standard_normal(n) + float(np.real(drift)) * dt
        return np.concatenate([[float(np.real(x0))], float(np.real(x0)) + np.cumsum(inc)])
    z = rng.standard_normal((n, 2))
    inc = math.sqrt(dt) * (z[:, 0] + 1j * z[:, 1]) + complex(drift) * dt
    return np.concatenate([[complex(x0)], complex(x0) + np.cumsum(inc)])


def sample_brownian(
    dim: int,
    dt: float,
    T: float,
    drift: float | complex = 0.0,
    seed: int = 0,
    x0: float | complex = 0.0,
    replicate: int = 0,
) -> SamplePath:
    """Euler 増分 sqrt(dt) N(0,1) + drift dt（dim=2 は複素数値）"""
    if dim not in (1, 2):
        raise InvalidParameterError(f"dim must be 1 or 2, got {dim}")
    n = _n_steps(dt, T)
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.BROWNIAN)
    values = _brownian_values(rng, dim, n, dt, drift, x0)
    return SamplePath(
        times=dt * np.arange(n + 1),
        values=values,
        kind="brownian",
        params={"dim": float(dim), "drift": float(np.real(drift)), "x0": float(np.real(x0))},
        seed=seed,
        replicate=replicate,
    )


def sample_brownian_ensemble(
    dt: float, T: float, replicates: int | Sequence[int], drift: float = 0.0, seed: int = 0, x0: float = 0.0
) -> PathEnsemble:
    """1次元 BM のアンサンブル。各行は sample_brownian(replicate=r) と一致する"""
    reps = list(range(replicates)) if isinstance(replicates, int) else list(replicates)
    n = _n_steps(dt, T)
    rows = [
        _brownian_values(rng_utils.keyed_generator(seed, r, rng_utils.BROWNIAN), 1, n, dt, drift, x0)
        for r in reps
    ]
    return PathEnsemble(
        times=dt * np.arange(n + 1),
        values=np.vstack(rows),
        kind="brownian",
        params={"dim": 1.0, "drift": float(drift), "x0": float(x0)},
        seed=seed,
        replicates=np.asarray(reps),
        hits=np.zeros(len(reps), dtype=int),
    )


# ---------------------------------------------------------------------------
# Bessel

def bessel_phase(d: float) -> str:
    require_positive(d=d)
    if d < 2:
        return "hits_and_reflects"
    if d == 2:
        return "neighbourhood_recurrent"
    return "transient"


def _bessel_step(x: np.ndarray, dB: np.ndarray, d: float, dt: float, delta0: float):
    """1ステップ更新。(新しい値, 境界ヒット判定) を返す

    d >= 1: ドリフト陰的 + 反射 X' = (|y| + sqrt(y^2 + 4 a dt)) / 2, y = X + dB
    ヒットは反射前の値 y が delta0 を下回ったステップ（全次元で同じ判定）
    d < 1 : 2乗 Bessel Z = X^2 の反射 Euler
    """
    a = 0.5 * (d - 1.0)
    if d >= 1:
        y = x + dB
        new = 0.5 * (np.abs(y) + np.sqrt(y * y + 4.0 * a * dt))
        hit = y < delta0
    else:
        zsq = x * x + d * dt + 2.0 * x * dB
        hit = zsq < delta0 * delta0
        new = np.sqrt(np.abs(zsq))
    return np.maximum(new, delta0 if d >= 2 else 0.0), hit


def _bessel_block(x0: float, d: float, dt: float, n: int, gens: list, delta0: float):
    reps = len(gens)
    out = np.empty((reps, n + 1))
    out[:, 0] = x0
    start = 0
    if x0 == 0.0:
        # 0 からの最初の1歩は chi_d 周辺分布で厳密に
        out[:, 1] = np.array([math.sqrt(dt * g.chisquare(d)) for g in gens])
        start = 1
    noise = math.sqrt(dt) * np.vstack([g.standard_normal(n) for g in gens])
    hits = np.zeros(reps, dtype=int)
    first_hit = np.full(reps, -1)
    x = out[:, start]
    for k in range(start, n):
        x, hit = _bessel_step(x, noise[:, k], d, dt, delta0)
        out[:, k + 1] = x
        if hit.any():
            hits += hit
            fresh = hit & (first_hit < 0)
            first_hit[fresh] = k + 1
    return out, hits, first_hit


def sample_bessel(d: float, x0: float, dt: float, T: float, seed: int = 0, replicate: int = 0) -> SamplePath:
    require_positive(d=d)
    if x0 < 0:
        raise InvalidParameterError("x0 must be nonnegative")
    n = _n_steps(dt, T)
    gen = rng_utils.keyed_generator(seed, replicate, rng_utils.BESSEL)
    values, hits, first_hit = _bessel_block(float(x0), d, dt, n, [gen], settings.BESSEL_DELTA0)
    return SamplePath(
        times=dt * np.arange(n + 1),
        values=values[0],
        kind="bessel",
        params={"d": float(d), "a": 0.5 * (d - 1), "x0": float(x0)},
        seed=seed,
        replicate=replicate,
        boundary_hits=int(hits[0]),
        first_hit_time=float(first_hit[0] * dt) if first_hit[0] >= 0 else None,
    )


def sample_bessel_ensemble(
    d: float, x0: float, dt: float, T: float, replicates: int | Sequence[int], seed: int = 0
) -> PathEnsemble:
    require_positive(d=d)
    n = _n_steps(dt, T)
    reps = list(range(replicates)) if isinstance(replicates, int) else list(replicates)
    blocks, hit_blocks = [], []
    for chunk in _chunks(reps):
        gens = [rng_utils.keyed_generator(seed, r, rng_utils.BESSEL) for r in chunk]
        values, hits, _ = _bessel_block(float(x0), d, dt, n, gens, settings.BESSEL_DELTA0)
        blocks.append(values)
        hit_blocks.append(hits)
    return PathEnsemble(
        times=dt * np.arange(n + 1),
        values=np.vstack(blocks),
        kind="bessel",
        params={"d": float(d), "a": 0.5 * (d - 1), "x0": float(x0)},
        seed=seed,
        replicates=np.asarray(reps),
        hits=np.concatenate(hit_blocks),
    )


# ---------------------------------------------------------------------------
# radial Bessel

def radial_bessel_phase(a: float) -> str:
    if -0.5 < a < 0.5:
        return "hits_boundary"
    return "avoids_boundary"


def _cot_remainder(u: np.ndarray) -> np.ndarray:
    """cot(u) - 1/u（u -> 0 で -u/3）"""
    small = u < 1e-4
    safe = np.where(small, 1.0, u)
    return np.where(small, -u / 3.0, 1.0 / np.tan(safe) - 1.0 / safe)


def _radial_step(y: np.ndarray, dB: np.ndarray, a: float, dt: float, delta0: float):
    """近い方の境界からの距離 u で更新する（pi - Y も同じ方程式）"""
    near_top = y > 0.5 * np.pi
    u = np.where(near_top, np.pi - y, y)
    noise = np.where(near_top, -dB, dB)
    if a >= 0.5:
        v = u + noise + a * _cot_remainder(u) * dt
        u_new = 0.5 * (np.abs(v) + np.sqrt(v * v + 4.0 * a * dt))
        hit = v < delta0
    else:
        # 到達可能な相: tamed Euler + 反射、境界を横切ったらヒット
        tame = np.maximum(u, math.sqrt(dt))
        v = u + a / np.tan(tame) * dt + noise
        hit = v < delta0
        u_new = np.abs(v)
    u_new = np.clip(u_new, delta0, np.pi - delta0)
    y_new = np.where(near_top, np.pi - u_new, u_new)
    return np.clip(y_new, delta0, np.pi - delta0), hit


def _radial_block(y0, a: float, dt: float, n: int, gens: list, delta0: float, record_every: int = 1):
    reps = len(gens)
    cols = n // record_every + 1
    out = np.empty((reps, cols))
    y = np.broadcast_to(np.asarray(y0, dtype=float), (reps,)).copy()
    out[:, 0] = y
    noise = math.sqrt(dt) * np.vstack([g.standard_normal(n) for g in gens])
    hits = np.zeros(reps, dtype=int)
    first_hit = np.full(reps, -1)
    for k in range(n):
        y, hit = _radial_step(y, noise[:, k], a, dt, delta0)
        if hit.any():
            hits += hit
            fresh = hit & (first_hit < 0)
            first_hit[fresh] = k + 1
        if (k + 1) % record_every == 0:
            out[:, (k + 1) // record_every] = y
    return out, hits, first_hit


def sample_radial_bessel(a: float, y0: float, dt: float, T: float, seed: int = 0, replicate: int = 0) -> SamplePath:
    if not (0 < y0 < np.pi):
        raise InvalidParameterError("y0 must lie strictly inside (0, pi)")
    n = _n_steps(dt, T)
    gen = rng_utils.keyed_generator(seed, replicate, rng_utils.RADIAL_BESSEL)
    values, hits, first_hit = _radial_block(y0, a, dt, n, [gen], settings.BESSEL_DELTA0)
    return SamplePath(
        times=dt * np.arange(n + 1),
        values=values[0],
        kind="radial_bessel",
        params={"a": float(a), "x0": float(y0)},
        seed=seed,
        replicate=replicate,
        boundary_hits=int(hits[0]),
        first_hit_time=float(first_hit[0] * dt) if first_hit[0] >= 0 else None,
    )


def sample_radial_bessel_ensemble(
    a: float,
    y0: float | np.ndarray,
    dt: float,
    T: float,
    replicates: int | Sequence[int],
    seed: int = 0,
    record_every: int = 1,
    stream: int = rng_utils.RADIAL_BESSEL,
) -> PathEnsemble:
    n = _n_steps(dt, T)
    reps = list(range(replicates)) if isinstance(replicates, int) else list(replicates)
    y0_arr = np.broadcast_to(np.asarray(y0, dtype=float), (len(reps),))
    if np.any(y0_arr <= 0) or np.any(y0_arr >= np.pi):
        raise InvalidParameterError("y0 must lie strictly inside (0, pi)")
    blocks, hit_blocks = [], []
    offset = 0
    for chunk in _chunks(reps):
        gens = [rng_utils.keyed_generator(seed, r, stream) for r in chunk]
        values, hits, _ = _radial_block(
            y0_arr[offset:offset + len(chunk)], a, dt, n, gens, settings.BESSEL_DELTA0, record_every
        )
        offset += len(chunk)
        blocks.append(values)
        hit_blocks.append(hits)
    return PathEnsemble(
        times=dt * record_every * np.arange(n // record_every + 1),
        values=np.vstack(blocks),
        kind="radial_bessel",
        params={"a": float(a)},
        seed=seed,
        replicates=np.asarray(reps),
        hits=np.concatenate(hit_blocks),
    )


def radial_bessel_stationary_density(a: float, y: np.ndarray | float) -> np.ndarray:
    """c_a sin^{2a}(y)"""
    if a <= -0.5:
        raise InvalidParameterError("stationary law exists only for a > -1/2")
    c = math.gamma(a + 1.0) / (math.sqrt(math.pi) * math.gamma(a + 0.5))
    return c * np.sin(np.asarray(y, dtype=float)) ** (2 * a)


def sample_radial_bessel_stationary(a: float, n: int, seed: int = 0, replicate: int = 0) -> np.ndarray:
    """定常分布から厳密に: Y = arccos(1 - 2X), X ~ Beta(a+1/2, a+1/2)"""
    if a <= -0.5:
        raise InvalidParameterError("stationary law exists only for a > -1/2")
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.RADIAL_BESSEL, 1)
    x = rng.beta(a + 0.5, a + 0.5, size=n)
    return np.arccos(1.0 - 2.0 * x)


# ---------------------------------------------------------------------------
# conditioned segments

def sample_conditioned_positive(
    drift: float,
    dt: float,
    T: float,
    seed: int = 0,
    replicate: int = 0,
    time_scale: float = 1.0,
    stream: int = rng_utils.FIELD_RADIAL,
    max_attempts: int = 8,
) -> SamplePath:
    """B_{time_scale t} + drift t を正に条件付けたパスを last-exit で作る

    無条件パスを水平線 T + 余裕 まで引き、最後の零点以降を時間シフトする。
    """
    require_positive(drift=drift, dt=dt, T=T)
    n_keep = _n_steps(dt, T)
    horizon = T + max(4.0 * time_scale / drift ** 2, 1.0)
    for attempt in range(max_attempts):
        n = _n_steps(dt, horizon)
        rng = rng_utils.keyed_generator(seed, replicate, stream, attempt)
        inc = math.sqrt(time_scale * dt) * rng.standard_normal(n) + drift * dt
        z = np.concatenate([[0.0], np.cumsum(inc)])
        nonpos = np.flatnonzero(z <= 0)
        last = int(nonpos[-1])
        if n - last >= n_keep:
            tail = last * dt > 0.95 * horizon
            if tail:
                logger.warning(f"last zero at {last * dt:.3f} within 5% of horizon {horizon:.3f}")
            values = z[last:last + n_keep + 1] - z[last]
            values[1:] = np.maximum(values[1:], 0.0)
            return SamplePath(
                times=dt * np.arange(n_keep + 1),
                values=values,
                kind="custom",
                params={"drift": float(drift), "time_scale": float(time_scale), "last_zero": last * dt},
                seed=seed,
                replicate=replicate,
                tail_warning=bool(tail),
            )
        horizon *= 2.0
    raise InvalidParameterError("could not place the last zero inside the horizon; increase T_max")


# ---------------------------------------------------------------------------
# densities

def density(spec: DensitySpec, t_or_y: float | np.ndarray) -> float | np.ndarray:
    x = np.asarray(t_or_y, dtype=float)
    if np.any(x <= 0):
        raise InvalidParameterError("density argument must be positive")
    p = spec.params
    if spec.kind == "first_passage_drift":
        alpha, b = p["alpha"], p["b"]
        value = alpha / np.sqrt(2 * np.pi * x) * np.exp(-((b - alpha * x) ** 2) / (2 * x))
    elif spec.kind == "first_passage_level0":
        b = p["b"]
        value = b / np.sqrt(2 * np.pi * x ** 3) * np.exp(-(b * b) / (2 * x))
    elif spec.kind == "bes3_transition":
        t = p["t"]
        value = np.sqrt(2 / np.pi) * t ** -1.5 * x * x * np.exp(-(x * x) / (2 * t))
    else:
        raise InvalidParameterError(f"unknown density kind {spec.kind}")
    return float(value) if np.ndim(t_or_y) == 0 else value


def density_table(spec: DensitySpec, lo: float, hi: float, n: int) -> list[tuple[float, float]]:
    require_positive(lo=lo, hi=hi)
    if n < 2 or hi <= lo:
        raise InvalidParameterError("table needs hi > lo and n >= 2")
    xs = np.linspace(lo, hi, n)
    return list(zip(xs.tolist(), np.asarray(density(spec, xs)).tolist()))


def export_density_table(spec: DensitySpec, lo: float, hi: float, n: int, path: Path | str) -> Path:
    return write_csv(path, ["x", "density"], density_table(spec, lo, hi, n))


def density_mass(spec: DensitySpec) -> float:
    """台全体での積分（正規化チェック用）"""
    value, _ = integrate.quad(lambda s: density(spec, s), 0, np.inf, limit=400)
    return float(value)


def bes3_laplace(
    s: float, t: float, replicates: int, seed: int = 0, dt: Optional[float] = None
) -> tuple[float, float]:
    """E[exp(-s Z_t)], Z ~ BES^3 from 0 の Monte Carlo 推定 (estimate, stderr)

    dt を与えるとパスシミュレーション、省略時は厳密な周辺分布 sqrt(t) chi_3。
    """
    require_positive(s=s, t=t)
    if replicates < 1000:
        raise InvalidParameterError("bes3_laplace needs at least 1000 replicates")
    if dt is None:
        rng = rng_utils.keyed_generator(seed, 0, rng_utils.BESSEL, 7)
        z = math.sqrt(t) * np.sqrt(rng.chisquare(3, size=replicates))
    else:
        z = sample_bessel_ensemble(3.0, 0.0, dt, t, replicates, seed=seed).values[:, -1]
    samples = np.exp(-s * z)
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(replicates))


def bes3_laplace_quadrature(s: float, t: float) -> float:
    spec = DensitySpec(kind="bes3_transition", params={"t": t})
    value, _ = integrate.quad(lambda y: math.exp(-s * y) * density(spec, y), 0, np.inf)
    return float(value)


def bes3_mean_quadrature(t: float) -> float:
    spec = DensitySpec(kind="bes3_transition", params={"t": t})
    value, _ = integrate.quad(lambda y: y * density(spec, y), 0, np.inf)
    return float(value)


def last_passage_times(ensemble: PathEnsemble, level: float) -> np.ndarray:
    """各パスが level を最後に通過する時刻（線形補間、未通過は nan）"""
    v = ensemble.values - level
    times = ensemble.times
    out = np.full(v.shape[0], np.nan)
    crossing = (v[:, :-1] <= 0) != (v[:, 1:] <= 0)
    for i in range(v.shape[0]):
        idx = np.flatnonzero(crossing[i])
        if idx.size == 0:
            continue
        k = idx[-1]
        frac = v[i, k] / (v[i, k] - v[i, k + 1])
        out[i] = times[k] + frac * (times[k + 1] - times[k])
    return out


# ---------------------------------------------------------------------------
# density-change martingales

def bessel_martingale(path: SamplePath, a: float, eps: float = 1e-3) -> np.ndarray:
    """N_t = (B_t/B_0)^a exp(-a(a-1)/2 int ds/B^2)、B <= eps で停止"""
    b = np.asarray(path.values, dtype=float)
    if b[0] <= 0:
        raise InvalidParameterError("martingale needs B_0 > 0")
    stop = np.flatnonzero(b <= eps)
    k_stop = int(stop[0]) if stop.size else b.size - 1
    b = b.copy()
    b[k_stop:] = b[k_stop]
    dt = path.dt
    inv = 1.0 / np.maximum(b, eps) ** 2
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * dt)])
    integral[k_stop:] = integral[k_stop]
    return (np.maximum(b, eps) / b[0]) ** a * np.exp(-0.5 * a * (a - 1) * integral)


def radial_bessel_martingale(path: SamplePath, a: float, eps: float = 1e-3) -> np.ndarray:
    """M_t = (sin B_t / sin B_0)^a exp(-a(a-1)/2 int ds/sin^2 B + a^2 t/2)、[eps, pi-eps] 脱出で停止"""
    b = np.asarray(path.values, dtype=float)
    if not (eps < b[0] < np.pi - eps):
        raise InvalidParameterError("martingale needs B_0 inside (eps, pi - eps)")
    out_idx = np.flatnonzero((b <= eps) | (b >= np.pi - eps))
    k_stop = int(out_idx[0]) if out_idx.size else b.size - 1
    b = b.copy()
    b[k_stop:] = b[k_stop]
    t = np.minimum(path.times, path.times[k_stop])
    sin_b = np.maximum(np.sin(b), math.sin(eps))
    inv = 1.0 / sin_b ** 2
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * path.dt)])
    integral[k_stop:] = integral[k_stop]
    return (sin_b / math.sin(b[0])) ** a * np.exp(-0.5 * a * (a - 1) * integral + 0.5 * a * a * t)


def ks_pvalue(x: np.ndarray, y: np.ndarray) -> float:
    return float(stats.ks_2samp(x, y).pvalue)
