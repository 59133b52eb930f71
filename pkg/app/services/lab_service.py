"""実験ハーネス: RunConfig -> Report と成果物の書き出し"""
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from app import __version__
from app.config import settings
from app.database import cache
from app.models.conformal import ObstacleSet, ReachRadius
from app.models.lab import FitResult, Report, ReportMeta, RunConfig, ScaleEstimate
from app.services import conformal_service, loewner_service, lqg_service, whitney_service
from app.utils import rng_utils
from app.utils.errors import InsufficientScalesError, InvalidParameterError
from app.utils.io_utils import write_csv
from app.utils.stats_utils import is_monotone, weighted_linear_fit

logger = logging.getLogger(__name__)

SCALE_COLUMNS = ["scale", "estimate", "stderr", "n"]
MODULUS_LADDER = [2.0 ** -k for k in range(6, 17)]
ESCAPE_LADDER = [2.0 ** -k for k in range(3, 10)]
MOMENT_LADDER = [2.0 ** -k for k in range(2, 7)]
INTENSITY_POINTS = [0.05, 0.1, 0.2, 0.4, 0.8]
# 粗い 2 スケールは過渡領域として報告のみ
TRANSIENT_SCALES = 2


# ---------------------------------------------------------------------------
# plumbing

def _map_replicates(fn: Callable[[int], object], replicates: int, workers: int) -> list:
    """replicate id 順に結果を返す（ワーカー数に依存しない）"""
    ids = list(range(replicates))
    if workers <= 1 or replicates <= 1:
        return [fn(r) for r in ids]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, ids))


def _mean_se(values: Sequence[float]) -> tuple[float, float, int]:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, 0
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se, int(v.size)


def _fixed_kappa(cfg: RunConfig, kappa: float) -> float:
    if cfg.kappa is not None and not math.isclose(cfg.kappa, kappa):
        raise InvalidParameterError(f"{cfg.experiment} runs at kappa={kappa:g}, got kappa={cfg.kappa:g}")
    return kappa


def _fit(x: np.ndarray, y: np.ndarray, se: Optional[np.ndarray], sign: float = 1.0) -> FitResult:
    fit = weighted_linear_fit(x, y, se)
    lo, hi = sorted((sign * fit["ci_lo"], sign * fit["ci_hi"]))
    return FitResult(exponent=sign * fit["slope"], ci_lo=lo, ci_hi=hi, r2=fit["r2"], residuals=fit["residuals"])


def _try_fit(diagnostics: dict, *args, **kwargs) -> Optional[FitResult]:
    try:
        return _fit(*args, **kwargs)
    except InsufficientScalesError as exc:
        logger.warning(f"fit refused: {exc}")
        diagnostics["fit_error"] = str(exc)
        return None


def _local_slopes(x: np.ndarray, y: np.ndarray) -> list[float]:
    return [float(v) for v in np.diff(y) / np.diff(x)]


def _report(cfg: RunConfig, scales: list[ScaleEstimate], fit: Optional[FitResult], diagnostics: dict,
            started: float, params: Optional[dict] = None) -> Report:
    echo = cfg.model_dump()
    echo.update(params or {})
    return Report(
        experiment=cfg.experiment,
        params=echo,
        scales=scales,
        fit=fit,
        meta=ReportMeta(seed=cfg.seed, version=__version__, wallclock_s=time.perf_counter() - started),
        diagnostics=diagnostics,
    )


def _usable_ladder(ladder: Sequence[float], floor: float, ceiling: float, what: str) -> tuple[list, list]:
    keep, dropped = [], []
    for s in ladder:
        (keep if floor <= s <= ceiling else dropped).append(float(s))
    if dropped:
        logger.warning(f"{what}: dropped scales {dropped} outside [{floor:.3g}, {ceiling:.3g}]")
    return keep, dropped


# ---------------------------------------------------------------------------
# SLE_8 modulus of continuity

def modulus_of_continuity(points: np.ndarray, dt: float, deltas: Sequence[float]) -> np.ndarray:
    """M(delta) = sup_{|s-t| <= delta} |eta(s) - eta(t)|（格子上のラグで評価）"""
    pts = np.asarray(points, dtype=complex)
    lags = np.minimum(np.round(np.asarray(deltas) / dt).astype(int), pts.size - 1)
    out = np.empty(lags.size)
    best, done = 0.0, 0
    for idx in np.argsort(lags):
        for lag in range(done + 1, int(lags[idx]) + 1):
            best = max(best, float(np.abs(pts[lag:] - pts[:-lag]).max()))
        done = max(done, int(lags[idx]))
        out[idx] = best
    return out


def _modulus_replicate(r: int, kappa: float, cfg: RunConfig, deltas: tuple) -> np.ndarray:
    driving = loewner_service.generate_driving("sle", kappa, dt=cfg.dt, T=cfg.T, seed=cfg.seed, replicate=r)
    trace = loewner_service.extract_trace(driving)
    if trace.parameterization != "capacity":
        raise InvalidParameterError("modulus is measured in capacity time only")
    return modulus_of_continuity(trace.points, cfg.dt, deltas)


def _modulus_table(kappa: float, cfg: RunConfig, deltas: list) -> tuple[np.ndarray, np.ndarray]:
    rows = _map_replicates(partial(_modulus_replicate, kappa=kappa, cfg=cfg, deltas=tuple(deltas)),
                           cfg.replicates, cfg.workers)
    M = np.vstack(rows)
    se = M.std(axis=0, ddof=1) / math.sqrt(M.shape[0]) if M.shape[0] > 1 else np.zeros(M.shape[1])
    return M.mean(axis=0), se


def _loglaw_and_holder(deltas: np.ndarray, mean: np.ndarray, se: np.ndarray) -> dict:
    rel = se / mean
    out = {}
    for name, x in (("loglaw", np.log(np.log(1.0 / deltas))), ("holder", np.log(deltas))):
        try:
            fit = weighted_linear_fit(x, np.log(mean), rel)
            out[name] = {"slope": fit["slope"], "r2": fit["r2"]}
        except InsufficientScalesError as exc:
            out[name] = {"error": str(exc)}
    return out


def run_sle8_modulus(cfg: RunConfig) -> Report:
    started = time.perf_counter()
    kappa = _fixed_kappa(cfg, 8.0)
    ladder = sorted(cfg.epsilons or MODULUS_LADDER, reverse=True)
    deltas, dropped = _usable_ladder(ladder, 4 * cfg.dt, min(cfg.T, 0.5), "sle8_modulus")
    diagnostics: dict = {"dropped_scales": dropped, "target_exponent": 0.25}
    if not deltas:
        raise InsufficientScalesError("no modulus scale survives the 4 dt resolution floor")
    mean, se = _modulus_table(kappa, cfg, deltas)
    scales = [ScaleEstimate(scale=d, estimate=float(m), stderr=float(s), n=cfg.replicates)
              for d, m, s in zip(deltas, mean, se)]

    d = np.asarray(deltas)
    fit_sel = slice(TRANSIENT_SCALES, None)
    x = np.log(np.log(1.0 / d[fit_sel]))
    fit = _try_fit(diagnostics, x, np.log(mean[fit_sel]), (se / mean)[fit_sel], sign=-1.0)
    local = [-v for v in _local_slopes(np.log(np.log(1.0 / d)), np.log(mean))]
    diagnostics["local_exponents"] = local
    diagnostics["monotone_toward_target"] = is_monotone([abs(v - 0.25) for v in local], increasing=False, tol=0.05)
    diagnostics["competing_fits"] = _loglaw_and_holder(d[fit_sel], mean[fit_sel], se[fit_sel])

    if cfg.control_kappa:
        c_mean, c_se = _modulus_table(cfg.control_kappa, cfg, deltas)
        diagnostics["control"] = {
            "kappa": cfg.control_kappa,
            "estimates": [float(v) for v in c_mean],
            **_loglaw_and_holder(d[fit_sel], c_mean[fit_sel], c_se[fit_sel]),
        }
    return _report(cfg, scales, fit, diagnostics, started, {"kappa": kappa})


# ---------------------------------------------------------------------------
# SLE_4 two-sided escape

def two_sided_pair(cfg: RunConfig, replicate: int) -> tuple[np.ndarray, np.ndarray]:
    """eta1: whole-plane SLE4(2)、eta2: C \\ eta1 を一様化した座標での chordal SLE4 を戻したもの"""
    r0 = cfg.r0 or settings.WHOLE_PLANE_R0
    horizon = math.log(4.0 * settings.R_MACRO / r0)
    wp = cache.cached_driving(
        lambda: loewner_service.generate_driving("whole_plane_rho", 4.0, rho=2.0, dt=cfg.whole_plane_dt,
                                                 T=horizon, seed=cfg.seed, replicate=replicate, r0=r0),
        4.0, cfg.seed, replicate, scheme="whole_plane_rho", rho=2.0, dt=cfg.whole_plane_dt, T=horizon, r0=r0,
    )
    eta1 = loewner_service.extract_whole_plane_trace(wp).points
    unzipper = loewner_service.CurveUnzipper(eta1)
    ring = settings.R_MACRO * np.exp(2j * math.pi * np.arange(16) / 16)
    size = float(np.median(np.abs(unzipper.forward(ring))))
    n = max(eta1.size - 1, 16)
    T2 = size * size
    chordal = loewner_service.generate_driving("sle", 4.0, dt=T2 / n, T=T2, seed=rng_utils.derive_seed(cfg.seed, 2),
                                               replicate=replicate)
    eta2 = loewner_service.trace_from_uniformized(unzipper, loewner_service.extract_trace(chordal))
    return eta1, eta2


def _escape_replicate(r: int, cfg: RunConfig, ladder: tuple) -> list[dict]:
    eta1, eta2 = two_sided_pair(cfg, r)
    curves = [eta1, eta2]
    obstacles = ObstacleSet(polylines=curves, delta_abs=settings.WOS_DELTA)
    target = ReachRadius(radius=settings.R_MACRO)
    out = []
    for j, eps in enumerate(ladder):
        rng = rng_utils.keyed_generator(cfg.seed, r, rng_utils.CANDIDATES, j)
        cand = eps * np.exp(1j * rng.uniform(0.0, 2 * math.pi, size=cfg.candidates))
        kept = conformal_service.admissible_points(curves, cand, cfg.filter_walks,
                                                   seed=rng_utils.derive_seed(cfg.seed, j, 1), replicate=r)
        probs = []
        for k, z in enumerate(kept[:cfg.max_points]):
            est = conformal_service.escape_probability(obstacles, z, target, cfg.walks,
                                                       seed=rng_utils.derive_seed(cfg.seed, j, k, 2), replicate=r)
            # 成功 0 回でも有限になるよう (k + 1/2) / (n + 1)
            probs.append((est["successes"] + 0.5) / (est["walks"] + 1.0))
        out.append({"candidates": int(cand.size), "kept": int(kept.size),
                    "p_min": float(min(probs)) if probs else None})
    return out


def run_sle4_escape(cfg: RunConfig) -> Report:
    started = time.perf_counter()
    _fixed_kappa(cfg, 4.0)
    ladder = sorted(cfg.epsilons or ESCAPE_LADDER, reverse=True)
    rows = _map_replicates(partial(_escape_replicate, cfg=cfg, ladder=tuple(ladder)), cfg.replicates, cfg.workers)

    scales, dropped, retained, p_mins = [], [], [], []
    for j, eps in enumerate(ladder):
        per_rep = [row[j] for row in rows]
        values = [math.log(math.log(1.0 / x["p_min"])) for x in per_rep if x["p_min"] is not None]
        kept = sum(x["kept"] for x in per_rep)
        total = sum(x["candidates"] for x in per_rep)
        retained.append(kept / total if total else 0.0)
        if not values:
            logger.warning(f"sle4_escape: no admissible point at eps={eps}; scale dropped")
            dropped.append({"scale": eps, "candidates": total})
            continue
        mean, se, n = _mean_se(values)
        scales.append(ScaleEstimate(scale=eps, estimate=mean, stderr=se, n=n))
        p_mins.append(min(x["p_min"] for x in per_rep if x["p_min"] is not None))

    diagnostics: dict = {"dropped_scales": dropped, "retained_fraction": retained, "p_min": p_mins,
                         "target_exponent": 3.0}
    fit = None
    if scales:
        x = np.log(1.0 / np.array([s.scale for s in scales]))
        y = np.array([s.estimate for s in scales])
        se = np.array([s.stderr for s in scales])
        fit = _try_fit(diagnostics, x[TRANSIENT_SCALES:], y[TRANSIENT_SCALES:], se[TRANSIENT_SCALES:])
        local = _local_slopes(x, y)
        diagnostics["local_slopes"] = local
        diagnostics["slopes_increasing"] = is_monotone(local, increasing=True, tol=0.1)
    else:
        diagnostics["fit_error"] = "no admissible points at any scale"
    return _report(cfg, scales, fit, diagnostics, started, {"kappa": 4.0, "R_macro": settings.R_MACRO})


# ---------------------------------------------------------------------------
# quasihyperbolic divergence

def sle4_complement_raster(cfg: RunConfig, replicate: int):
    def build():
        driving = loewner_service.generate_driving("sle", 4.0, dt=cfg.dt, T=cfg.T, seed=cfg.seed, replicate=replicate)
        trace = loewner_service.extract_trace(driving)
        return conformal_service.rasterize_sle4_left_domain(trace.points, cfg.raster_size, thicken=cfg.thicken)
    return cache.cached_domain_raster(build, name="sle4_left", seed=cfg.seed, replicate=replicate, dt=cfg.dt,
                                      T=cfg.T, size=cfg.raster_size, thicken=cfg.thicken)


def _qh_levels(raster, levels: Iterable[int], prefer: Optional[complex] = None) -> list[dict]:
    out = []
    base = None
    for L in levels:
        dec = whitney_service.whitney_decompose(raster, L)
        if base is None:
            base = whitney_service.base_point(dec, prefer)
        js = whitney_service.js_shadow_sum(dec, base)
        out.append({"level": L, "qh_integral": js["qh_integral"], "sum_s2": js["sum_s2"], "cells": js["n_cells"]})
    return out


def _qh_replicate(r: int, cfg: RunConfig) -> list[dict]:
    return _qh_levels(sle4_complement_raster(cfg, r), cfg.levels)


def _pair_ratios(levels: list[int], values: list[float], gap: int = 2) -> dict:
    idx = {L: v for L, v in zip(levels, values)}
    return {f"{L}->{L + gap}": idx[L + gap] / idx[L] for L in levels if L + gap in idx and idx[L] > 0}


def run_qh_divergence(cfg: RunConfig) -> Report:
    started = time.perf_counter()
    _fixed_kappa(cfg, 4.0)
    levels = sorted(cfg.levels)
    rows = _map_replicates(partial(_qh_replicate, cfg=cfg), cfg.replicates, cfg.workers)
    disk = _qh_levels(conformal_service.rasterize_disk(cfg.raster_size), levels, prefer=0j)

    scales = []
    sle_means = []
    for j, L in enumerate(levels):
        mean, se, n = _mean_se([row[j]["qh_integral"] for row in rows])
        sle_means.append(mean)
        scales.append(ScaleEstimate(scale=2.0 ** -L, estimate=mean, stderr=se, n=n))
    disk_q = [d["qh_integral"] for d in disk]
    diagnostics: dict = {
        "levels": levels,
        "sle4_ratio": _pair_ratios(levels, sle_means),
        "disk_ratio": _pair_ratios(levels, disk_q),
        "disk_qh_integral": disk_q,
        "disk_oracle": whitney_service.disk_qh_integral_oracle(),
        "sle4_sum_s2": [float(np.mean([row[j]["sum_s2"] for row in rows])) for j in range(len(levels))],
        "disk_sum_s2": [d["sum_s2"] for d in disk],
    }
    x = np.log(2.0) * np.array(levels, dtype=float)
    se = np.array([s.stderr for s in scales]) / np.array(sle_means)
    fit = _try_fit(diagnostics, x, np.log(sle_means), se if np.all(se > 0) else None)
    return _report(cfg, scales, fit, diagnostics, started, {"kappa": 4.0})


# ---------------------------------------------------------------------------
# LQG

def run_moment_scaling(cfg: RunConfig) -> Report:
    started = time.perf_counter()
    gamma = cfg.gamma if cfg.gamma is not None else math.sqrt(2.0)
    alpha = cfg.alpha if cfg.alpha is not None else 1.0
    p = cfg.p if cfg.p is not None else 0.5
    eps = cfg.epsilons or MOMENT_LADDER
    res = lqg_service.moment_scaling(gamma, alpha, p, eps, cfg.replicates, seed=cfg.seed, measure=cfg.measure,
                                     delta=cfg.delta, n_modes=cfg.n_modes)
    scales = [ScaleEstimate(scale=pt["x"], estimate=pt["estimate"], stderr=pt["stderr"], n=cfg.replicates)
              for pt in res["points"]]
    fit = FitResult(exponent=res["slope"], ci_lo=res["slope_ci"][0], ci_hi=res["slope_ci"][1], r2=res["r2"],
                    residuals=res["residuals"])
    diagnostics = {"expected_slope": res["expected_slope"], "rejection_rate": res["rejection_rate"],
                   "truncation": res["params"]["truncation"], "log_cp": res["log_cp"]}
    return _report(cfg, scales, fit, diagnostics, started, {"gamma": gamma, "alpha": alpha, "p": p})


def run_intensity_profile(cfg: RunConfig) -> Report:
    started = time.perf_counter()
    gamma = cfg.gamma if cfg.gamma is not None else math.sqrt(2.0)
    alpha = cfg.alpha if cfg.alpha is not None else 0.0
    ys = cfg.points or INTENSITY_POINTS
    res = lqg_service.intensity_profile(gamma, alpha, [1j * y for y in ys], cfg.radius, cfg.replicates,
                                        seed=cfg.seed, n_terms=cfg.n_terms)
    scales = [ScaleEstimate(scale=y, estimate=pt["estimate"], stderr=pt["stderr"], n=cfg.replicates)
              for y, pt in zip(ys, res["points"])]
    diagnostics: dict = {
        "expected_im_exponent": res["expected_im_exponent"],
        "harmonic_factor": [pt["harmonic_factor"] for pt in res["points"]],
        "harmonic_exact": [pt["harmonic_exact"] for pt in res["points"]],
    }
    if "harmonic_im_fit" in res:
        diagnostics["harmonic_im_exponent"] = res["harmonic_im_fit"]["slope"]
    fit = None
    if "im_fit" in res:
        f = res["im_fit"]
        fit = FitResult(exponent=f["slope"], ci_lo=f["ci_lo"], ci_hi=f["ci_hi"], r2=f["r2"])
    else:
        diagnostics["fit_error"] = "need at least three distinct heights"
    return _report(cfg, scales, fit, diagnostics, started, {"gamma": gamma, "alpha": alpha})


EXPERIMENTS = {
    "sle8_modulus": run_sle8_modulus,
    "sle4_escape": run_sle4_escape,
    "qh_divergence": run_qh_divergence,
    "moment_scaling": run_moment_scaling,
    "intensity_profile": run_intensity_profile,
}


def run_experiment(cfg: RunConfig) -> Report:
    logger.info(f"running {cfg.experiment} seed={cfg.seed} replicates={cfg.replicates} workers={cfg.workers}")
    report = EXPERIMENTS[cfg.experiment](cfg)
    logger.info(f"{cfg.experiment} finished in {report.meta.wallclock_s:.1f}s")
    return report


# ---------------------------------------------------------------------------
# artifacts

_PLOT_SCRIPT = '''"""Plot the per-scale table of {experiment}."""
import csv
import math
import sys
from pathlib import Path

import matplotlib.pyplot as plt

path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).with_name("{csv_name}")
with path.open() as fh:
    rows = [{{k: float(v) for k, v in row.items()}} for row in csv.DictReader(fh)]

x = [r["scale"] for r in rows]
y = [r["estimate"] for r in rows]
err = [r["stderr"] for r in rows]
fig, ax = plt.subplots(figsize=(5, 4))
ax.errorbar(x, y, yerr=err, fmt="o-", capsize=3)
ax.set_xscale("log")
if all(v > 0 for v in y):
    ax.set_yscale("log")
ax.set_xlabel("scale")
ax.set_ylabel("estimate")
ax.set_title("{experiment} (seed {seed}, fit {exponent})")
fig.tight_layout()
fig.savefig(path.with_suffix(".png"), dpi=150)
'''


def scale_rows(report: Report) -> list[list]:
    return [[s.scale, s.estimate, s.stderr, s.n] for s in report.scales]


def emit_report(report: Report, out_dir: Path | str, formats: Sequence[str] = ("json", "csv", "plot")) -> dict:
    """JSON・per-scale CSV・プロットスクリプトを書き出してパスを返す"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.experiment
    written = {}
    for fmt in formats:
        if fmt == "json":
            path = out / f"{stem}.json"
            path.write_text(json.dumps(report.model_dump(mode="json"), indent=2))
        elif fmt == "csv":
            path = write_csv(out / f"{stem}.csv", SCALE_COLUMNS, scale_rows(report))
        elif fmt == "plot":
            path = out / f"plot_{stem}.py"
            exponent = f"{report.fit.exponent:.3f}" if report.fit else "none"
            path.write_text(_PLOT_SCRIPT.format(experiment=stem, csv_name=f"{stem}.csv", seed=report.meta.seed,
                                                exponent=exponent))
        else:
            raise InvalidParameterError(f"unknown report format: {fmt}")
        written[fmt] = path
        logger.info(f"wrote {path}")
    return written


def load_report(path: Path | str) -> Report:
    return Report.model_validate_json(Path(path).read_text())
