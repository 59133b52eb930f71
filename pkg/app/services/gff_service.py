"""GFF サンプラー（radial + lateral 分解）と quantum wedge / cone の場"""
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError
from scipy import signal

from app.config import settings
from app.models.gff import FieldGrid, FieldRealization, WedgeSpec, q_parameter
from app.models.stochastic import SamplePath
from app.services import stochastic_service
from app.utils import io_utils, rng_utils
from app.utils.errors import InvalidParameterError, OutOfDomainError, require_positive

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Green's functions / parameters

def neumann_green_half_plane(z: complex, w: complex) -> float:
    return float(-math.log(abs(z - w)) - math.log(abs(z - w.conjugate())))


def neumann_green_strip(z: complex, w: complex) -> float:
    """strip 上の Neumann Green 関数 G_H(e^z, e^w)"""
    return neumann_green_half_plane(complex(np.exp(z)), complex(np.exp(w)))


def weight_from_alpha(gamma: float, alpha: float, surface: str = "wedge") -> float:
    Q = q_parameter(gamma)
    if surface == "wedge":
        return gamma * (Q + gamma / 2 - alpha)
    return 2 * gamma * (Q - alpha)


def alpha_from_weight(gamma: float, weight: float, surface: str = "wedge") -> float:
    Q = q_parameter(gamma)
    if surface == "wedge":
        return Q + gamma / 2 - weight / gamma
    return Q - weight / (2 * gamma)


def wedge_spec(gamma: float, alpha: Optional[float] = None, weight: Optional[float] = None,
               surface: str = "wedge", embedding: str = "first_exit") -> WedgeSpec:
    """alpha か weight のどちらか一方から WedgeSpec を作る"""
    if (alpha is None) == (weight is None):
        raise InvalidParameterError("give exactly one of alpha or weight")
    tag, value = ("alpha", alpha) if alpha is not None else ("weight", weight)
    try:
        return WedgeSpec(gamma=gamma, value=value, tag=tag, surface=surface, embedding=embedding)
    except ValidationError as e:
        raise InvalidParameterError(str(e.errors()[0]["msg"])) from e


# ---------------------------------------------------------------------------
# zero-boundary field on a rectangle

def _rectangle_modes(a: float, b: float, n_modes: int):
    m = np.arange(1, n_modes + 1)
    lam = np.pi ** 2 * ((m[:, None] / a) ** 2 + (m[None, :] / b) ** 2)
    # Dirichlet 内積 (1/2pi) int grad f . grad g で正規化した係数
    scale = np.sqrt(2 * np.pi / lam) * 2.0 / math.sqrt(a * b)
    return m, scale


def sample_zero_boundary_gff(rect: Sequence[float], n_modes: int = 32, seed: int = 0, replicate: int = 0,
                             dx: Optional[float] = None) -> FieldRealization:
    """矩形 [0,a]x[0,b] の Dirichlet 固有関数展開、係数は i.i.d. N(0,1)"""
    a, b = float(rect[0]), float(rect[1])
    require_positive(a=a, b=b)
    if n_modes < 1:
        raise InvalidParameterError("n_modes must be >= 1")
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.FIELD_MODES)
    coeffs = rng.standard_normal((n_modes, n_modes))
    dx = dx if dx is not None else min(a, b) / (2 * n_modes)
    return FieldRealization(
        domain="rectangle",
        grid=FieldGrid(x0=0.0, x1=a, dx=dx, height=b),
        lateral_modes=coeffs,
        normalization="zero boundary",
        seed=seed,
        replicate=replicate,
    )


def rectangle_green(rect: Sequence[float], n_modes: int, f: np.ndarray, g: np.ndarray, nq: int = 128) -> float:
    """固有和で打ち切った Cov[(h,f),(h,g)]（f, g は nq x nq の中点格子上の値）"""
    proj_f = rectangle_projection(rect, n_modes, f, nq)
    proj_g = rectangle_projection(rect, n_modes, g, nq)
    return float(np.sum(proj_f * proj_g))


def rectangle_projection(rect: Sequence[float], n_modes: int, f: np.ndarray, nq: int = 128) -> np.ndarray:
    """(h,f) = sum coeff * proj[m,n] となる proj"""
    a, b = float(rect[0]), float(rect[1])
    m, scale = _rectangle_modes(a, b, n_modes)
    xq = (np.arange(nq) + 0.5) * a / nq
    yq = (np.arange(nq) + 0.5) * b / nq
    sx = np.sin(np.pi * np.outer(m, xq) / a)
    sy = np.sin(np.pi * np.outer(m, yq) / b)
    # f[j, i] = f(xq[i], yq[j])
    integral = sx @ np.asarray(f).T @ sy.T * (a / nq) * (b / nq)
    return scale * integral


def pair_with(field: FieldRealization, f: np.ndarray, nq: int = 128) -> float:
    """矩形場とテスト関数の L2 ペアリング"""
    if field.domain != "rectangle":
        raise InvalidParameterError("pairing by projection is defined for rectangle fields")
    proj = rectangle_projection((field.grid.x1, field.grid.height), field.n_modes, f, nq)
    return float(np.sum(field.lateral_modes * proj))


# ---------------------------------------------------------------------------
# radial / lateral pieces

def _two_sided_grid(grid: FieldGrid) -> tuple[np.ndarray, int, int]:
    xs = grid.xs
    zero = int(round(-grid.x0 / grid.dx))
    if grid.x0 > 0 or grid.x1 < 0 or abs(xs[zero]) > 1e-9 * max(1.0, grid.dx):
        raise InvalidParameterError("strip/cylinder grids must contain x = 0 as a grid point")
    return xs, zero, xs.size - 1 - zero


def _lateral_ou(n_modes: int, n_x: int, dx: float, var_scale: float, rng: np.random.Generator) -> np.ndarray:
    """cos/sin モード係数: 共分散 (var_scale/k) e^{-k|dx|} の定常 OU を厳密 AR(1) で"""
    k = np.arange(1, n_modes + 1)
    var = var_scale / k
    rho = np.exp(-k * dx)
    z = rng.standard_normal((n_modes, n_x))
    out = np.empty((n_modes, n_x))
    for i in range(n_modes):
        e = z[i] * math.sqrt(var[i] * (1 - rho[i] ** 2))
        e[0] = z[i, 0] * math.sqrt(var[i])
        out[i] = signal.lfilter([1.0], [1.0, -rho[i]], e)
    return out


def _radial_path(xs: np.ndarray, values: np.ndarray, seed: int, replicate: int, **params) -> SamplePath:
    return SamplePath(times=xs, values=values, kind="custom", params=params, seed=seed, replicate=replicate)


def _two_sided_brownian(n_neg: int, n_pos: int, dx: float, time_scale: float, seed: int, replicate: int) -> np.ndarray:
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.FIELD_RADIAL)
    sd = math.sqrt(time_scale * dx)
    right = np.concatenate([[0.0], np.cumsum(sd * rng.standard_normal(n_pos))])
    left = np.concatenate([[0.0], np.cumsum(sd * rng.standard_normal(n_neg))])
    return np.concatenate([left[:0:-1], right])


def sample_free_boundary_gff_strip(grid: FieldGrid, n_modes: Optional[int] = None, seed: int = 0,
                                   replicate: int = 0) -> FieldRealization:
    """S = R x (0, pi) の自由境界 GFF、{0}x(0,pi) 上の平均を 0 に固定"""
    n_modes = settings.N_MODES if n_modes is None else n_modes
    if n_modes < 1:
        raise InvalidParameterError("n_modes must be >= 1")
    xs, n_neg, n_pos = _two_sided_grid(grid)
    radial = _two_sided_brownian(n_neg, n_pos, grid.dx, 2.0, seed, replicate)
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.FIELD_LATERAL)
    modes = _lateral_ou(n_modes, xs.size, grid.dx, 2.0, rng)
    return FieldRealization(
        domain="strip",
        grid=grid.model_copy(update={"height": math.pi}),
        radial=_radial_path(xs, radial, seed, replicate),
        lateral_modes=modes,
        normalization="mean zero on {0}x(0,pi)",
        seed=seed,
        replicate=replicate,
    )


def sample_whole_plane_gff_cylinder(grid: FieldGrid, n_modes: Optional[int] = None, seed: int = 0,
                                    replicate: int = 0) -> FieldRealization:
    """円柱座標 z -> e^z の whole-plane GFF（単位円上の平均を 0）"""
    n_modes = settings.N_MODES if n_modes is None else n_modes
    if n_modes < 1:
        raise InvalidParameterError("n_modes must be >= 1")
    xs, n_neg, n_pos = _two_sided_grid(grid)
    radial = _two_sided_brownian(n_neg, n_pos, grid.dx, 1.0, seed, replicate)
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.FIELD_LATERAL)
    cos_modes = _lateral_ou(n_modes, xs.size, grid.dx, 1.0, rng)
    sin_modes = _lateral_ou(n_modes, xs.size, grid.dx, 1.0, rng)
    return FieldRealization(
        domain="cylinder",
        grid=grid.model_copy(update={"height": 2.0 * math.pi}),
        radial=_radial_path(xs, radial, seed, replicate),
        lateral_modes=cos_modes,
        lateral_modes_sin=sin_modes,
        normalization="mean zero on the unit circle",
        seed=seed,
        replicate=replicate,
    )


def sample_disk_harmonic_part(points: Sequence[complex], n_terms: int = 256, replicates: int = 1,
                              seed: int = 0) -> np.ndarray:
    """単位円板上の自由境界 GFF の調和部分 sum Re(c_n z^n)、E|c_n|^2 = 4/n（原点で 0）"""
    z = np.asarray(points, dtype=complex)
    if np.any(np.abs(z) >= 1):
        raise OutOfDomainError("harmonic part is sampled inside the unit disk")
    n = np.arange(1, n_terms + 1)
    powers = z[None, :] ** n[:, None]
    out = np.empty((replicates, z.size))
    for r in range(replicates):
        rng = rng_utils.keyed_generator(seed, r, rng_utils.FIELD_MODES, 1)
        c = np.sqrt(2.0 / n) * (rng.standard_normal(n_terms) + 1j * rng.standard_normal(n_terms))
        out[r] = np.real(c @ powers)
    return out


# ---------------------------------------------------------------------------
# quantum surfaces

def build_surface_field(spec: WedgeSpec, grid: FieldGrid, seed: int = 0, replicate: int = 0,
                        n_modes: Optional[int] = None) -> FieldRealization:
    """quantum wedge（strip）/ cone（cylinder）の場を指定の埋め込みで"""
    n_modes = settings.N_MODES if n_modes is None else n_modes
    xs, n_neg, n_pos = _two_sided_grid(grid)
    dx = grid.dx
    Q, alpha = spec.Q, spec.alpha
    scale = 2.0 if spec.surface == "wedge" else 1.0
    rng = rng_utils.keyed_generator(seed, replicate, rng_utils.FIELD_RADIAL)
    embedding = spec.embedding

    if spec.is_q_wedge:
        # -X_{-t/2} は 0 から出る BES^3、X_{t/2} は標準 BM
        if embedding != "first_exit":
            logger.info("Q-wedge is built in its first-exit embedding")
            embedding = "first_exit"
        right = np.concatenate([[0.0], np.cumsum(math.sqrt(2 * dx) * rng.standard_normal(n_pos))])
        if n_neg:
            bes = stochastic_service.sample_bessel(3.0, 0.0, 2 * dx, 2 * dx * n_neg, seed=seed, replicate=replicate)
            left = -bes.values
        else:
            left = np.zeros(1)
    else:
        drift = Q - alpha
        right_free = np.concatenate([[0.0], np.cumsum(math.sqrt(scale * dx) * rng.standard_normal(n_pos) + drift * dx)])
        left_free = np.concatenate([[0.0], np.cumsum(math.sqrt(scale * dx) * rng.standard_normal(n_neg) - drift * dx)])
        if embedding == "first_exit":
            right = right_free
            if n_neg:
                cond = stochastic_service.sample_conditioned_positive(
                    drift, dx, dx * n_neg, seed=seed, replicate=replicate, time_scale=scale,
                    stream=rng_utils.FIELD_RADIAL, max_attempts=12,
                )
                left = -cond.values
            else:
                left = np.zeros(1)
        else:
            left = left_free
            if n_pos:
                cond = stochastic_service.sample_conditioned_positive(
                    drift, dx, dx * n_pos, seed=seed, replicate=replicate, time_scale=scale,
                    stream=rng_utils.FIELD_RADIAL, max_attempts=12,
                )
                right = cond.values
            else:
                right = np.zeros(1)

    values = np.concatenate([left[:0:-1], right])
    radial = _radial_path(xs, values, seed, replicate, alpha=float(alpha), Q=float(Q))

    lat_rng = rng_utils.keyed_generator(seed, replicate, rng_utils.FIELD_LATERAL)
    if spec.surface == "wedge":
        modes = _lateral_ou(n_modes, xs.size, dx, 2.0, lat_rng)
        sin_modes = None
        domain, height = "strip", math.pi
    else:
        modes = _lateral_ou(n_modes, xs.size, dx, 1.0, lat_rng)
        sin_modes = _lateral_ou(n_modes, xs.size, dx, 1.0, lat_rng)
        domain, height = "cylinder", 2.0 * math.pi

    return FieldRealization(
        domain=domain,
        grid=grid.model_copy(update={"height": height}),
        radial=radial,
        lateral_modes=modes,
        lateral_modes_sin=sin_modes,
        gamma=spec.gamma,
        embedding=embedding,
        alpha=float(alpha),
        normalization=f"{spec.surface} weight {spec.weight:.6g}",
        seed=seed,
        replicate=replicate,
    )


def radial_hits_zero(field: FieldRealization) -> dict:
    """平均過程が 0 を最初 / 最後に取る格子時刻"""
    v = field.radial.values
    xs = field.radial.times
    zero = int(np.argmin(np.abs(xs)))
    left_neg = bool(np.all(v[:zero] < 0)) if zero else True
    right_pos = bool(np.all(v[zero + 1:] > 0)) if zero + 1 < v.size else True
    return {"x0": float(xs[zero]), "value": float(v[zero]), "negative_before": left_neg, "positive_after": right_pos}


# ---------------------------------------------------------------------------
# evaluation

def _native_points(field: FieldRealization, z: np.ndarray) -> np.ndarray:
    if field.domain == "half_plane_annulus":
        # 実軸での Neumann 反射
        w = z.real + 1j * np.abs(z.imag)
        if np.any(np.abs(w) == 0):
            raise OutOfDomainError("half-plane field is not defined at the origin")
        return np.log(w)
    return z


def _check_inside(field: FieldRealization, zn: np.ndarray) -> None:
    g = field.grid
    x, y = zn.real, zn.imag
    if np.any(x < g.x0 - 1e-12) or np.any(x > g.x1 + 1e-12):
        raise OutOfDomainError(f"points leave the grid x-range [{g.x0}, {g.x1}]")
    if field.domain == "rectangle":
        if np.any(y < -1e-12) or np.any(y > g.height + 1e-12):
            raise OutOfDomainError("points leave the rectangle")


def _lateral_values(field: FieldRealization, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """cos モードは偶かつ 2pi 周期なので strip の外側の y は反射した値になる"""
    xs = field.radial.times
    k = np.arange(1, field.n_modes + 1)
    pos = np.clip((x - xs[0]) / field.grid.dx, 0, xs.size - 1 - 1e-9)
    i = pos.astype(int)
    frac = pos - i
    nxt = np.minimum(i + 1, xs.size - 1)
    coef = field.lateral_modes[:, i] * (1 - frac) + field.lateral_modes[:, nxt] * frac
    out = np.sum(coef * np.cos(np.outer(k, y)), axis=0)
    if field.lateral_modes_sin is not None:
        coef_s = field.lateral_modes_sin[:, i] * (1 - frac) + field.lateral_modes_sin[:, nxt] * frac
        out = out + np.sum(coef_s * np.sin(np.outer(k, y)), axis=0)
    return out


def evaluate_field(field: FieldRealization, points, chunk: int = 1 << 14) -> np.ndarray:
    """点評価: モード和 + radial の線形補間（+ shift）"""
    z = np.atleast_1d(np.asarray(points, dtype=complex)).ravel()
    if z.size > chunk:
        return np.concatenate([evaluate_field(field, z[i:i + chunk], chunk) for i in range(0, z.size, chunk)])
    zn = _native_points(field, z)
    _check_inside(field, zn)
    if field.domain == "rectangle":
        a, b = field.grid.x1, field.grid.height
        m, scale = _rectangle_modes(a, b, field.n_modes)
        sx = np.sin(np.pi * np.outer(m, zn.real) / a)
        sy = np.sin(np.pi * np.outer(m, zn.imag) / b)
        vals = np.einsum("mi,mn,ni->i", sx, field.lateral_modes * scale, sy)
        return vals + field.shift
    radial = np.interp(zn.real, field.radial.times, field.radial.values)
    vals = radial + _lateral_values(field, zn.real, zn.imag)
    if field.domain == "half_plane_annulus" and field.embedding != "none":
        # quantum surface の座標変換 h_H(w) = h_S(log w) - Q log|w|
        vals = vals - field.Q * zn.real
    return vals + field.shift


def materialize(field: FieldRealization, ny: Optional[int] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """格子上の値 (xs, ys, values[ny, nx])"""
    if field.domain == "half_plane_annulus":
        raise InvalidParameterError("materialize the strip field before mapping to the half-plane")
    xs = field.grid.xs
    ny = ny or max(8, int(round(field.grid.height / field.grid.dx)))
    if field.domain == "cylinder":
        ys = field.grid.height * np.arange(ny) / ny
    else:
        ys = field.grid.height * (np.arange(ny) + 0.5) / ny
    X, Y = np.meshgrid(xs, ys)
    values = evaluate_field(field, (X + 1j * Y).ravel()).reshape(Y.shape)
    return xs, ys, values


def circle_points(field: FieldRealization) -> int:
    """円平均の求積点数 M（モード数より多くとる）"""
    return max(settings.CIRCLE_POINTS, field.n_modes + 1)


def circle_averages(field: FieldRealization, centers, eps: float) -> np.ndarray:
    """場の座標での半径 eps の円平均（M 点台形則）をまとめて"""
    require_positive(epsilon=eps)
    c = np.atleast_1d(np.asarray(centers, dtype=complex)).ravel()
    M = circle_points(field)
    ring = eps * np.exp(2j * np.pi * np.arange(M) / M)
    pts = (c[:, None] + ring[None, :]).ravel()
    return evaluate_field(field, pts).reshape(c.size, M).mean(axis=1)


def vertical_or_circle_average(field: FieldRealization, location, epsilon_or_x: float) -> float:
    """location="vertical": x での縦平均。"origin": 平面の原点中心の円（円柱の縦線 x = log eps）。
    複素数: 場の座標での円平均"""
    if isinstance(location, str):
        if field.domain not in ("strip", "cylinder"):
            raise InvalidParameterError("vertical averages are defined for strip and cylinder fields")
        if location == "origin":
            x = math.log(float(epsilon_or_x))
        elif location == "vertical":
            x = float(epsilon_or_x)
        else:
            raise InvalidParameterError(f"unknown averaging location {location}")
        M = circle_points(field)
        if field.domain == "cylinder":
            ys = 2 * np.pi * np.arange(M) / M
        else:
            ys = np.pi * (np.arange(M) + 0.5) / M
        return float(np.mean(evaluate_field(field, x + 1j * ys)))
    return float(circle_averages(field, [complex(location)], float(epsilon_or_x))[0])


# ---------------------------------------------------------------------------
# coordinate changes

def coordinate_change(field: FieldRealization, scale: float) -> FieldRealization:
    """psi(z) = scale*z に対する h o psi + Q log|psi'|（strip/cylinder では横平行移動）"""
    require_positive(scale=scale)
    if field.domain not in ("strip", "cylinder"):
        raise InvalidParameterError("scaling is implemented for strip and cylinder embeddings")
    shift = math.log(scale)
    times = field.radial.times - shift
    radial = field.radial.model_copy(update={"times": times})
    grid = field.grid.model_copy(update={"x0": field.grid.x0 - shift, "x1": field.grid.x1 - shift})
    return field.model_copy(update={"radial": radial, "grid": grid})


def shift_field(field: FieldRealization, c: float) -> FieldRealization:
    return field.model_copy(update={"shift": field.shift + float(c)})


def to_half_plane(field: FieldRealization) -> FieldRealization:
    """strip の場を H 座標（w = e^z）で見る"""
    if field.domain != "strip":
        raise InvalidParameterError("only strip fields map to the half-plane picture")
    return field.model_copy(update={"domain": "half_plane_annulus"})


# ---------------------------------------------------------------------------
# export

def export_field(field: FieldRealization, path: Path | str, fmt: str = "csv", ny: Optional[int] = None) -> Path:
    xs, ys, values = materialize(field, ny)
    if fmt == "csv":
        X, Y = np.meshgrid(xs, ys)
        rows = zip(X.ravel(), Y.ravel(), values.ravel())
        return io_utils.write_csv(path, ["x", "y", "value"], rows)
    if fmt == "binary":
        return io_utils.write_binary(path, "field", values, p1=float(field.grid.dx), p2=float(values.shape[1]))
    raise InvalidParameterError(f"unknown field export format {fmt}")
