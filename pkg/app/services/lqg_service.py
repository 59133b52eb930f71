"""LQG 面積・境界測度の推定とスケーリング実験"""
import logging
import math
from typing import Optional, Sequence

import numpy as np

from app.config import settings
from app.models.gff import FieldGrid, FieldRealization
from app.models.lqg import MeasureEstimate
from app.services import gff_service
from app.utils import rng_utils
from app.utils.errors import InvalidParameterError, OutOfDomainError, require_positive
from app.utils.stats_utils import weighted_linear_fit

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Riemann sums

def _cells(lo: float, hi: float, size: float) -> tuple[np.ndarray, float]:
    n = max(1, int(round((hi - lo) / size)))
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5), h


def _check_region(field: FieldRealization, region: dict, epsilon: float) -> None:
    for key in ("x0", "x1", "y0", "y1"):
        if key not in region:
            raise InvalidParameterError(f"region needs {key}")
    if not (region["x1"] > region["x0"] and region["y1"] > region["y0"]):
        raise InvalidParameterError("region must have positive extent")
    inradius = 0.5 * min(region["x1"] - region["x0"], region["y1"] - region["y0"])
    if epsilon >= inradius:
        raise InvalidParameterError("epsilon must be below half the region's inradius")


def lqg_area(field: FieldRealization, region: dict, epsilon: float, gamma: Optional[float] = None,
             cell: Optional[float] = None) -> MeasureEstimate:
    """sum eps^{gamma^2/2} e^{gamma h_eps(z)} |cell|（region は場の座標の矩形）"""
    gamma = field.gamma if gamma is None else gamma
    require_positive(epsilon=epsilon)
    _check_region(field, region, epsilon)
    xs, hx = _cells(region["x0"], region["x1"], cell or epsilon)
    ys, hy = _cells(region["y0"], region["y1"], cell or epsilon)
    X, Y = np.meshgrid(xs, ys)
    h_eps = gff_service.circle_averages(field, (X + 1j * Y).ravel(), epsilon)
    density = epsilon ** (gamma ** 2 / 2) * np.exp(gamma * h_eps)
    return MeasureEstimate(
        region=dict(region),
        epsilon=epsilon,
        gamma=gamma,
        value=float(np.sum(density) * hx * hy),
        diagnostics={"cells": int(density.size)},
    )


def lqg_boundary(field: FieldRealization, interval: Sequence[float], epsilon: float,
                 gamma: Optional[float] = None, critical: bool = False, side: str = "bottom",
                 cell: Optional[float] = None) -> MeasureEstimate:
    """境界測度: 亜臨界 eps^{gamma^2/4} e^{gamma h/2}、臨界 (gamma=2) eps (-h/2 + log 1/eps) e^h"""
    gamma = field.gamma if gamma is None else gamma
    require_positive(epsilon=epsilon)
    if critical and not math.isclose(gamma, 2.0):
        raise InvalidParameterError("the critical boundary measure needs gamma = 2")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise InvalidParameterError("interval must have b > a")
    if field.domain not in ("strip", "half_plane_annulus"):
        raise InvalidParameterError("boundary measures live on the strip or half-plane boundary")
    xs, h = _cells(a, b, cell or epsilon)
    if field.domain == "strip":
        y = 0.0 if side == "bottom" else field.grid.height
        centers = xs + 1j * y
    else:
        centers = xs + 0j
        if np.any(np.abs(xs) <= epsilon):
            raise OutOfDomainError("boundary interval must stay epsilon away from the origin")
    # 境界点の半円平均は反射により円平均と一致
    h_eps = gff_service.circle_averages(field, centers, epsilon)

    clamped = None
    if critical:
        local = epsilon * (-h_eps / 2 + math.log(1 / epsilon)) * np.exp(h_eps)
        negative = local < 0
        clamped = float(np.mean(negative))
        local = np.where(negative, 0.0, local)
    else:
        local = epsilon ** (gamma ** 2 / 4) * np.exp(gamma * h_eps / 2)
    return MeasureEstimate(
        region={"interval": [a, b], "side": side},
        epsilon=epsilon,
        gamma=gamma,
        value=float(np.sum(local) * h),
        critical=critical,
        clamped_fraction=clamped,
        diagnostics={"cells": int(local.size)},
    )


# ---------------------------------------------------------------------------
# closed-form intensities

def area_intensity_density(gamma: float, alpha: float, z: complex, normalization: str = "harmonic_at_i") -> float:
    """E[mu(dz)]/dz

    harmonic_at_i: 調和部分が i で 0 の自由境界場（4^{-g^2} CR^{g^2/2} Im^{-g^2} |z+i|^{2g^2}）
    semicircle: 単位半円上の平均 0（(2 Im z)^{-g^2/2} max(|z|,1)^{2g^2}）
    どちらも |z|^{-alpha gamma} を掛ける。
    """
    z = complex(z)
    if z.imag <= 0:
        raise OutOfDomainError("intensity is defined for Im(z) > 0")
    g2 = gamma * gamma
    y = z.imag
    if normalization == "harmonic_at_i":
        cr = 2.0 * y
        base = 4.0 ** (-g2) * cr ** (g2 / 2) * y ** (-g2) * abs(z + 1j) ** (2 * g2)
    elif normalization == "semicircle":
        base = (2.0 * y) ** (-g2 / 2) * max(abs(z), 1.0) ** (2 * g2)
    else:
        raise InvalidParameterError(f"unknown normalization {normalization}")
    return float(base * abs(z) ** (-alpha * gamma))


def _to_disk(z: np.ndarray) -> np.ndarray:
    return -(z - 1j) / (z + 1j)


def _ball_quadrature(z: complex, r: float, n_r: int = 3, n_theta: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """B(z,r) の極座標中点則（点と重み、重みの和は pi r^2）"""
    rr = r * (np.arange(n_r) + 0.5) / n_r
    th = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    R, T = np.meshgrid(rr, th)
    pts = z + (R * np.exp(1j * T)).ravel()
    weights = (R * (r / n_r) * (2 * np.pi / n_theta)).ravel()
    return pts, weights


def harmonic_variance(w: np.ndarray, n_terms: Optional[int] = None) -> np.ndarray:
    """円板調和部分の分散 -2 log(1 - |w|^2)、n_terms があれば打ち切り和 2 sum |w|^{2n}/n"""
    r2 = np.abs(np.asarray(w, dtype=complex)) ** 2
    if n_terms is None:
        return -2.0 * np.log1p(-r2)
    n = np.arange(1, n_terms + 1)
    return 2.0 * np.sum(r2[..., None] ** n / n, axis=-1)


def intensity_profile(gamma: float, alpha: float, points: Sequence[complex], r: float, replicates: int,
                      seed: int = 0, n_terms: int = 256) -> dict:
    """E[mu(B(z,r))]/(pi r^2) の Monte Carlo と指数フィット

    細かいスケールの寄与 CR(z,H)^{gamma^2/2} は解析的、調和部分は円板上でサンプルする。
    調和部分だけの因子 E[e^{gamma h}] も点ごとに閉形式と並べて返す。
    """
    require_positive(r=r)
    pts = np.asarray(points, dtype=complex)
    if np.any(pts.imag <= r):
        raise OutOfDomainError("balls must stay inside the upper half-plane")
    estimates, stderrs, factors, factor_se, exact = [], [], [], [], []
    for z in pts:
        q, w = _ball_quadrature(complex(z), r)
        disk = _to_disk(q)
        harmonic = np.exp(gamma * gff_service.sample_disk_harmonic_part(disk, n_terms, replicates, seed))
        fine = (2.0 * q.imag) ** (gamma ** 2 / 2) * np.abs(q) ** (-alpha * gamma)
        area = np.pi * r * r
        per_rep = (harmonic * fine[None, :]) @ w / area
        estimates.append(float(per_rep.mean()))
        stderrs.append(float(per_rep.std(ddof=1) / math.sqrt(replicates)))
        h_rep = harmonic @ w / area
        factors.append(float(h_rep.mean()))
        factor_se.append(float(h_rep.std(ddof=1) / math.sqrt(replicates)))
        exact.append(float(np.exp(gamma ** 2 / 2 * harmonic_variance(disk, n_terms)) @ w / area))
    estimates = np.asarray(estimates)
    stderrs = np.asarray(stderrs)
    factors = np.asarray(factors)
    factor_se = np.asarray(factor_se)

    out = {
        "points": [{"z": [float(z.real), float(z.imag)], "estimate": e, "stderr": s,
                    "harmonic_factor": f, "harmonic_stderr": fs, "harmonic_exact": x}
                   for z, e, s, f, fs, x in zip(pts, estimates, stderrs, factors, factor_se, exact)],
        "expected_im_exponent": -gamma ** 2 / 2,
        "expected_harmonic_exponent": -gamma ** 2,
    }
    log_se = stderrs / estimates
    # |z+i|^{2 gamma^2} は既知の因子として除く
    known = 2 * gamma ** 2 * np.log(np.abs(pts + 1j))
    if pts.size >= 3 and np.ptp(pts.imag) > 0:
        fit = weighted_linear_fit(np.log(pts.imag), np.log(estimates) - known, log_se)
        out["im_fit"] = _fit_summary(fit)
        # 調和部分のみ: (1 - |w|^2)^{-gamma^2} = (4 Im z / |z+i|^2)^{-gamma^2}
        fit = weighted_linear_fit(np.log(pts.imag), np.log(factors) - known, factor_se / factors)
        out["harmonic_im_fit"] = _fit_summary(fit)
    if pts.size >= 3 and np.ptp(np.abs(pts)) > 0 and np.ptp(pts.imag) == 0:
        fit = weighted_linear_fit(np.log(np.abs(pts)), np.log(estimates) - known, log_se)
        out["abs_fit"] = _fit_summary(fit)
    return out


def _fit_summary(fit: dict) -> dict:
    return {k: fit[k] for k in ("slope", "intercept", "slope_stderr", "ci_lo", "ci_hi", "r2")}


# ---------------------------------------------------------------------------
# moment scaling

def moment_range(gamma: float, measure: str = "area") -> float:
    if measure == "area":
        return min(2.0 / gamma ** 2, 1.5)
    if measure == "boundary":
        return min(4.0 / gamma ** 2, 3.0)
    raise InvalidParameterError(f"unknown measure {measure}")


def truncation_length(gamma: float, tail: float = 1e-3) -> float:
    """u より左の切り捨て長 L: e^{-gamma sqrt(2L)} ~ tail"""
    return math.ceil((math.log(1.0 / tail) / gamma) ** 2 / 2.0)


def _q_wedge_radial(gamma: float, level: float, margin: float, dx: float, seed: int, replicate: int):
    """weight gamma^2/2 の wedge の平均過程を、level の初到達点の左に margin 残るまで延ばす"""
    spec = gff_service.wedge_spec(gamma, weight=gamma ** 2 / 2)
    span = margin + 4.0 * (abs(level) + 2.0) ** 2
    for attempt in range(6):
        n_neg = int(math.ceil(span / dx))
        grid = FieldGrid(x0=-n_neg * dx, x1=dx, dx=dx)
        field = gff_service.build_surface_field(spec, grid, seed=seed, replicate=replicate + (attempt << 32), n_modes=1)
        X = field.radial.values
        xs = field.radial.times
        if X[0] < level and _first_hit(xs, X, level) - margin >= xs[0]:
            return xs, X
        span *= 2.0
    raise InvalidParameterError("radial process did not reach the level; increase the horizon")


def _first_hit(xs: np.ndarray, X: np.ndarray, level: float) -> float:
    k = int(np.argmax(X >= level))
    if k == 0:
        return float(xs[0])
    frac = (level - X[k - 1]) / (X[k] - X[k - 1])
    return float(xs[k - 1] + frac * (xs[k] - xs[k - 1]))


def moment_scaling(gamma: float, alpha: float, p: float, epsilons: Sequence[float], replicates: int,
                   seed: int = 0, measure: str = "area", delta: float = 1 / 16, n_modes: Optional[int] = None,
                   L: Optional[float] = None) -> dict:
    """E[mu(S_- + u_{alpha,eps})^p] ~ eps^{alpha p gamma} の傾き

    各レプリケートで 1 本の Q-wedge 場を全 eps で共有し、横方向部分は窓の平行移動で使い回す。
    """
    require_positive(gamma=gamma, alpha=alpha, delta=delta)
    if not gamma <= 2:
        raise InvalidParameterError("gamma must lie in (0, 2]")
    bound = moment_range(gamma, measure)
    if not p < bound:
        raise InvalidParameterError(f"p must be below {bound:.4g} for the {measure} measure")
    eps = np.asarray(epsilons, dtype=float)
    if eps.size < 3 or np.any(eps <= 0) or np.any(eps >= 1):
        raise InvalidParameterError("need at least three epsilons in (0, 1)")
    n_modes = settings.N_MODES if n_modes is None else n_modes
    L = truncation_length(gamma) if L is None else L
    logger.info(f"moment scaling: gamma={gamma} alpha={alpha} p={p} truncation L={L}")

    dx = delta / 2
    levels = alpha * np.log(eps)
    M = max(settings.CIRCLE_POINTS, n_modes + 1)
    ring = delta * np.exp(2j * np.pi * np.arange(M) / M)
    cx, hx = _cells(-L, 0.0, delta)
    if measure == "area":
        cy, hy = _cells(0.0, math.pi, delta)
    else:
        cy, hy = np.array([0.0, math.pi]), 1.0
    CX, CY = np.meshgrid(cx, cy)
    centers = (CX + 1j * CY).ravel()
    ring_x = (centers.real[:, None] + ring.real[None, :])

    masses = np.zeros((replicates, eps.size))
    for r in range(replicates):
        xs, X = _q_wedge_radial(gamma, float(levels.min()), L + 2 * delta, dx, seed, r)
        window = gff_service.sample_free_boundary_gff_strip(
            FieldGrid(x0=-(math.ceil((L + 2 * delta) / dx)) * dx, x1=math.ceil(2 * delta / dx) * dx, dx=dx),
            n_modes=n_modes, seed=rng_utils.derive_seed(seed, r, rng_utils.FIELD_LATERAL), replicate=r,
        )
        lateral = (gff_service.circle_averages(window, centers, delta)
                   - np.interp(centers.real[:, None] + ring.real[None, :], window.radial.times,
                               window.radial.values).mean(axis=1))
        for j, level in enumerate(levels):
            u = _first_hit(xs, X, float(level))
            if u - L - delta < xs[0]:
                raise InvalidParameterError("radial grid too short for the truncation window")
            radial = np.interp(u + ring_x, xs, X).mean(axis=1)
            h_delta = radial + lateral
            if measure == "area":
                local = delta ** (gamma ** 2 / 2) * np.exp(gamma * h_delta)
                masses[r, j] = np.sum(local) * hx * hy
            else:
                local = delta ** (gamma ** 2 / 4) * np.exp(gamma * h_delta / 2)
                masses[r, j] = np.sum(local) * hx

    return _moment_fit(masses, eps, p, alpha, gamma, measure, L)


def _moment_fit(masses: np.ndarray, eps: np.ndarray, p: float, alpha: float, gamma: float, measure: str, L: float) -> dict:
    points = []
    means, ses = [], []
    rejected = 0
    for j, e in enumerate(eps):
        m = masses[:, j]
        if p < 0:
            keep = m > 0
            rejected += int(np.sum(~keep))
            m = m[keep]
        vals = m ** p
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        means.append(mean)
        ses.append(se)
        points.append({"x": float(e), "estimate": mean, "stderr": se})
    means = np.asarray(means)
    log_se = np.asarray(ses) / means
    fit = weighted_linear_fit(np.log(eps), np.log(means), log_se)
    expected = alpha * p * gamma * (1.0 if measure == "area" else 0.5)
    return {
        "law": "moment_scaling",
        "params": {"gamma": gamma, "alpha": alpha, "p": p, "measure": measure, "truncation": L},
        "points": points,
        "slope": fit["slope"],
        "slope_ci": [fit["ci_lo"], fit["ci_hi"]],
        "slope_stderr": fit["slope_stderr"],
        "log_cp": fit["intercept"],
        "r2": fit["r2"],
        "residuals": fit["residuals"],
        "expected_slope": expected,
        "rejection_rate": rejected / masses.size,
    }
