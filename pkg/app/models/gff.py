import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.models.stochastic import SamplePath

Domain = Literal["rectangle", "strip", "cylinder", "half_plane_annulus"]
Embedding = Literal["none", "circle_average", "first_exit"]
Surface = Literal["wedge", "cone"]


def q_parameter(gamma: float) -> float:
    return 2.0 / gamma + gamma / 2.0


class FieldGrid(BaseModel):
    """横方向 x 格子（strip/cylinder）または矩形 [0,a]x[0,b]"""
    x0: float
    x1: float
    dx: float
    height: float = math.pi

    @model_validator(mode="after")
    def _check(self):
        if not self.x1 > self.x0:
            raise ValueError("grid needs x1 > x0")
        if not (self.dx > 0 and self.height > 0):
            raise ValueError("grid spacing and height must be positive")
        return self

    @property
    def xs(self) -> np.ndarray:
        n = int(round((self.x1 - self.x0) / self.dx))
        return self.x0 + self.dx * np.arange(n + 1)


class FieldRealization(BaseModel):
    """radial 過程 + lateral モード係数で保持し、評価時に合成する"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    domain: Domain
    grid: FieldGrid
    radial: Optional[SamplePath] = None
    lateral_modes: np.ndarray
    lateral_modes_sin: Optional[np.ndarray] = None
    gamma: float = 2.0
    embedding: Embedding = "none"
    alpha: Optional[float] = None
    shift: float = 0.0
    normalization: str = ""
    seed: int = 0
    replicate: int = 0

    @model_validator(mode="after")
    def _check(self):
        if not (0 < self.gamma <= 2):
            raise ValueError("gamma must lie in (0, 2]")
        if self.domain != "rectangle":
            if self.radial is None:
                raise ValueError(f"{self.domain} field needs a radial path")
            if self.lateral_modes.ndim != 2 or self.lateral_modes.shape[1] != self.radial.times.size:
                raise ValueError("lateral modes must be (n_modes, len(radial.times))")
        elif self.lateral_modes.ndim != 2:
            raise ValueError("rectangle coefficients must be a (n, n) array")
        return self

    @property
    def Q(self) -> float:
        return q_parameter(self.gamma)

    @property
    def n_modes(self) -> int:
        return int(self.lateral_modes.shape[0])


class WedgeSpec(BaseModel):
    gamma: float
    value: float
    tag: Literal["alpha", "weight"]
    surface: Surface = "wedge"
    embedding: Literal["circle_average", "first_exit"] = "first_exit"

    @model_validator(mode="after")
    def _check(self):
        if not (0 < self.gamma <= 2):
            raise ValueError("gamma must lie in (0, 2]")
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        at_threshold = abs(self.alpha - self.Q) <= 1e-12
        if (self.alpha > self.Q and not at_threshold) or (at_threshold and self.surface != "wedge"):
            raise ValueError("alpha must be below Q (alpha = Q only for the Q-wedge)")
        return self

    @property
    def Q(self) -> float:
        return q_parameter(self.gamma)

    @property
    def alpha(self) -> float:
        if self.tag == "alpha":
            return self.value
        if self.surface == "wedge":
            return self.Q + self.gamma / 2 - self.value / self.gamma
        return self.Q - self.value / (2 * self.gamma)

    @property
    def weight(self) -> float:
        if self.tag == "weight":
            return self.value
        if self.surface == "wedge":
            return self.gamma * (self.Q + self.gamma / 2 - self.value)
        return 2 * self.gamma * (self.Q - self.value)

    @property
    def is_q_wedge(self) -> bool:
        return self.surface == "wedge" and math.isclose(self.alpha, self.Q, rel_tol=0, abs_tol=1e-12)
