"""集計・フィット用ヘルパー"""
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from app.utils.errors import InsufficientScalesError, InvalidParameterError


@dataclass
class MomentAccumulator:
    """pairwise merge 可能な平均・分散アキュムレータ"""
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, values: Iterable[float]) -> "MomentAccumulator":
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float).ravel()
        if arr.size == 0:
            return self
        other = MomentAccumulator(int(arr.size), float(arr.mean()), float(((arr - arr.mean()) ** 2).sum()))
        return self.merge(other)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * other.n / n
        self.m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def stderr(self) -> float:
        return float(np.sqrt(self.variance / self.n)) if self.n > 1 else 0.0


def merge_in_order(parts: Sequence[tuple[int, MomentAccumulator]]) -> MomentAccumulator:
    """replicate id 順に固定して畳み込む"""
    total = MomentAccumulator()
    for _, acc in sorted(parts, key=lambda item: item[0]):
        total.merge(acc)
    return total


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise InvalidParameterError("trials must be positive")
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


def binomial_stderr(successes: int, trials: int) -> float:
    p = successes / trials
    return float(np.sqrt(max(p * (1 - p), 0.0) / trials))


def weighted_linear_fit(
    x: Sequence[float],
    y: Sequence[float],
    stderr: Optional[Sequence[float]] = None,
    confidence: float = 0.95,
    min_points: int = 3,
) -> dict:
    """y = intercept + slope * x の重み付き最小二乗

    stderr を与えると 1/stderr^2 で重み付けする。
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < min_points:
        raise InsufficientScalesError(f"need at least {min_points} usable scales, got {n}")
    if stderr is None:
        w = np.ones(n)
    else:
        se = np.asarray(stderr, dtype=float)
        floor = max(float(np.median(se[se > 0])) * 1e-3, 1e-12) if np.any(se > 0) else 1.0
        w = 1.0 / np.maximum(se, floor) ** 2
    design = np.column_stack([np.ones(n), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    intercept, slope = float(coef[0]), float(coef[1])
    fitted = intercept + slope * x
    residuals = y - fitted

    dof = max(n - 2, 1)
    sigma2 = float((w * residuals ** 2).sum() / dof)
    cov = sigma2 * np.linalg.inv(design.T @ (design * w[:, None]))
    slope_se = float(np.sqrt(max(cov[1, 1], 0.0)))
    tq = stats.t.ppf(0.5 + confidence / 2, dof)

    ybar = float((w * y).sum() / w.sum())
    ss_tot = float((w * (y - ybar) ** 2).sum())
    r2 = 1.0 - float((w * residuals ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return {
        "slope": slope,
        "intercept": intercept,
        "slope_stderr": slope_se,
        "ci_lo": slope - tq * slope_se,
        "ci_hi": slope + tq * slope_se,
        "r2": r2,
        "residuals": residuals.tolist(),
    }


def l1_density_distance(samples: np.ndarray, density, lo: float, hi: float, bins: int = 50) -> float:
    """ヒストグラムと密度関数の L1 距離"""
    hist, edges = np.histogram(samples, bins=bins, range=(lo, hi), density=True)
    centres = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    return float(np.abs(hist - density(centres)).sum() * width)


def is_monotone(values: Sequence[float], increasing: bool = True, tol: float = 0.0) -> bool:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return True
    diffs = np.diff(arr)
    return bool(np.all(diffs >= -tol) if increasing else np.all(diffs <= tol))
