import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

Experiment = Literal["sle8_modulus", "sle4_escape", "qh_divergence", "moment_scaling", "intensity_profile"]


class RunConfig(BaseModel):
    experiment: Experiment
    seed: int = 0
    replicates: int = 16
    dt: float = 2.0 ** -14
    T: float = 1.0
    kappa: Optional[float] = None
    gamma: Optional[float] = None
    alpha: Optional[float] = None
    p: Optional[float] = None
    epsilons: List[float] = Field(default_factory=list)
    workers: int = 1
    output: str = "out"

    # 実験ごとの追加ノブ
    walks: int = 2000
    filter_walks: int = 200
    candidates: int = 64
    max_points: int = 8
    whole_plane_dt: float = 2.0 ** -10
    levels: List[int] = Field(default_factory=lambda: [5, 6, 7, 8])
    raster_size: int = 512
    thicken: int = 1
    n_modes: int = 64
    n_terms: int = 256
    delta: float = 1.0 / 16
    points: List[float] = Field(default_factory=list)
    radius: float = 0.02
    control_kappa: Optional[float] = 2.0
    r0: Optional[float] = None
    measure: Literal["area", "boundary"] = "area"

    @model_validator(mode="after")
    def _check(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilon ladder must be strictly decreasing")
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilon ladder must be positive")
        return self

    @classmethod
    def from_toml(cls, path: Path | str, **overrides: Any) -> "RunConfig":
        with Path(path).open("rb") as fh:
            data = tomllib.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


class ScaleEstimate(BaseModel):
    scale: float
    estimate: float
    stderr: float
    n: int


class FitResult(BaseModel):
    exponent: float
    ci_lo: float
    ci_hi: float
    r2: float
    residuals: List[float] = Field(default_factory=list)


class ReportMeta(BaseModel):
    seed: int
    version: str
    wallclock_s: float


class Report(BaseModel):
    experiment: str
    params: Dict[str, Any]
    scales: List[ScaleEstimate]
    fit: Optional[FitResult] = None
    meta: ReportMeta
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        numbers = [v for s in self.scales for v in (s.scale, s.estimate, s.stderr)]
        if self.fit is not None:
            numbers += [self.fit.exponent, self.fit.ci_lo, self.fit.ci_hi, self.fit.r2, *self.fit.residuals]
        numbers.append(self.meta.wallclock_s)
        if not all(math.isfinite(v) for v in numbers):
            raise ValueError("report contains non-finite numbers")
        return self
