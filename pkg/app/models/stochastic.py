from typing import Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

PathKind = Literal["brownian", "bessel", "radial_bessel", "custom"]
DensityKind = Literal["first_passage_drift", "first_passage_level0", "bes3_transition"]

# 必須パラメータ
DENSITY_PARAMS = {
    "first_passage_drift": ("alpha", "b"),
    "first_passage_level0": ("b",),
    "bes3_transition": ("t",),
}


class SamplePath(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    values: np.ndarray
    kind: PathKind
    params: Dict[str, float] = Field(default_factory=dict)
    seed: int = 0
    replicate: int = 0
    boundary_hits: int = 0
    first_hit_time: Optional[float] = None
    tail_warning: bool = False

    @model_validator(mode="after")
    def _check(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("times must be a nonempty 1d array")
        if np.asarray(self.values).shape[0] != t.size:
            raise ValueError("values length must equal times length")
        if t.size > 1:
            steps = np.diff(t)
            if not np.all(steps > 0):
                raise ValueError("times must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-12):
                raise ValueError("times must be uniformly spaced")
        if self.kind == "bessel" and np.any(np.asarray(self.values) < 0):
            raise ValueError("bessel path must stay nonnegative")
        if self.kind == "radial_bessel":
            v = np.asarray(self.values)
            if np.any(v < 0) or np.any(v > np.pi):
                raise ValueError("radial bessel path must stay in [0, pi]")
        return self

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> float | complex:
        """線形補間で X_t"""
        v = self.values
        if np.iscomplexobj(v):
            return complex(np.interp(t, self.times, v.real) + 1j * np.interp(t, self.times, v.imag))
        return float(np.interp(t, self.times, v))


class PathEnsemble(BaseModel):
    """レプリケートを束ねたパス (n_rep, n_times)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    values: np.ndarray
    kind: PathKind
    params: Dict[str, float] = Field(default_factory=dict)
    seed: int = 0
    replicates: np.ndarray
    hits: np.ndarray

    @model_validator(mode="after")
    def _check(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.times.size:
            raise ValueError("values must have shape (replicates, len(times))")
        if self.values.shape[0] != self.replicates.size:
            raise ValueError("one row per replicate id")
        return self

    def path(self, row: int) -> SamplePath:
        return SamplePath(
            times=self.times,
            values=self.values[row],
            kind=self.kind,
            params=self.params,
            seed=self.seed,
            replicate=int(self.replicates[row]),
            boundary_hits=int(self.hits[row]),
        )


class DensitySpec(BaseModel):
    kind: DensityKind
    params: Dict[str, float]

    @model_validator(mode="after")
    def _check(self):
        for name in DENSITY_PARAMS[self.kind]:
            value = self.params.get(name)
            if value is None:
                raise ValueError(f"{self.kind} requires parameter {name}")
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive")
        return self
