from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

Scheme = Literal["sle", "sle_rho", "whole_plane_rho", "reverse_sle_kappa"]
Side = Literal["left", "right"]
PathSide = Literal["left", "right", "interior"]
Parameterization = Literal["capacity", "radial_capacity"]


class ForcePoint(BaseModel):
    """SLE_kappa(rho) の force point 指定（初期位置は W_0 からの相対値）"""
    weight: float
    side: Side
    x0: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.side == "right" and self.x0 < 0:
            raise ValueError("right force points start at x0 >= 0")
        if self.side == "left" and self.x0 > 0:
            raise ValueError("left force points start at x0 <= 0")
        return self


class ForcePointPath(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: float
    side: PathSide
    values: np.ndarray


class DrivingFunction(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    dt: float
    W: np.ndarray
    kappa: float
    scheme: Scheme
    seed: int = 0
    replicate: int = 0
    t0: float = 0.0
    forcepoints: List[ForcePointPath] = Field(default_factory=list)
    O: Optional[np.ndarray] = None
    truncated: bool = False
    truncation_time: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        n = self.W.shape[0]
        if self.scheme == "whole_plane_rho":
            if self.O is None or self.O.shape[0] != n:
                raise ValueError("whole-plane driving needs O with the same length as W")
            if not (np.allclose(np.abs(self.W), 1.0, atol=1e-12) and np.allclose(np.abs(self.O), 1.0, atol=1e-12)):
                raise ValueError("whole-plane pair must stay on the unit torus")
        for fp in self.forcepoints:
            if fp.values.shape[0] != n:
                raise ValueError("force point path length must match W")
        if self.scheme == "sle_rho" and self.forcepoints:
            tol = 1e-12
            for fp in self.forcepoints:
                gap = fp.values - self.W if fp.side == "right" else self.W - fp.values
                if np.any(gap < -tol):
                    raise ValueError("force point ordering violated")
        return self

    @property
    def n_steps(self) -> int:
        return int(self.W.shape[0]) - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.W.shape[0])

    @property
    def horizon(self) -> float:
        return self.t0 + self.dt * self.n_steps


class Trace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    points: np.ndarray
    times: np.ndarray
    parameterization: Parameterization = "capacity"

    @model_validator(mode="after")
    def _check(self):
        if self.points.shape[0] != self.times.shape[0]:
            raise ValueError("points and times must have the same length")
        if self.times.size > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("times must be nondecreasing")
        if self.parameterization == "capacity" and np.any(self.points.imag < -1e-12):
            raise ValueError("chordal trace must stay in the closed upper half-plane")
        return self


class FlowResult(BaseModel):
    """evolve_point の結果: 値 または 吸収時刻"""
    value: Optional[complex] = None
    swallowed: bool = False
    swallow_time: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.swallowed and self.swallow_time is None:
            raise ValueError("swallowed result needs swallow_time")
        if not self.swallowed and self.value is None:
            raise ValueError("unswallowed result needs a value")
        return self
