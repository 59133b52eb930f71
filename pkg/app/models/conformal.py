from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ObstacleSet(BaseModel):
    """吸収集合: 解析的境界 + 折れ線"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    real_line: bool = False
    circle: Optional[Tuple[complex, float]] = None
    strip_height: Optional[float] = None
    polylines: List[np.ndarray] = Field(default_factory=list)
    delta_abs: float = 1e-6

    @model_validator(mode="after")
    def _check(self):
        if not self.delta_abs > 0:
            raise ValueError("delta_abs must be positive")
        if not (self.real_line or self.circle or self.strip_height or self.polylines):
            raise ValueError("obstacle set is empty")
        if self.circle is not None and not self.circle[1] > 0:
            raise ValueError("circle radius must be positive")
        if self.strip_height is not None and not self.strip_height > 0:
            raise ValueError("strip height must be positive")
        for line in self.polylines:
            if np.asarray(line).ndim != 1 or len(line) < 1:
                raise ValueError("polylines are 1d complex arrays")
        return self

    @property
    def component_names(self) -> list[str]:
        names = []
        if self.real_line:
            names.append("real_line")
        if self.circle is not None:
            names.append("circle")
        if self.strip_height is not None:
            names += ["strip_bottom", "strip_top"]
        names += [f"polyline_{i}" for i in range(len(self.polylines))]
        return names


class ReachRadius(BaseModel):
    """成功条件: |z - center| >= radius に到達"""
    center: complex = 0j
    radius: float

    @model_validator(mode="after")
    def _check(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        return self


class DomainRaster(BaseModel):
    """[-extent, extent]^2 上の bool ラスタ（True = 領域内）"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mask: np.ndarray
    extent: float = 1.0
    boundary_override: Optional[np.ndarray] = None
    name: str = "raster"

    @model_validator(mode="after")
    def _check(self):
        if self.mask.ndim != 2 or self.mask.shape[0] != self.mask.shape[1]:
            raise ValueError("raster must be square")
        if not self.mask.any():
            raise ValueError("raster has no interior pixels")
        return self

    @property
    def size(self) -> int:
        return int(self.mask.shape[0])

    @property
    def pixel(self) -> float:
        return 2 * self.extent / self.size

    def pixel_centres(self) -> np.ndarray:
        """(row, col) -> x + iy、row 0 が上端"""
        idx = (np.arange(self.size) + 0.5) * self.pixel - self.extent
        return idx[None, :] + 1j * idx[::-1, None]


class WhitneyDecomposition(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    centers: np.ndarray
    levels: np.ndarray
    dists: np.ndarray
    shadow_diam: np.ndarray
    adjacency: List[np.ndarray]
    boundary_points: np.ndarray
    component: np.ndarray
    max_level: int
    raster_name: str = "raster"

    @model_validator(mode="after")
    def _check(self):
        n = self.centers.shape[0]
        for arr in (self.levels, self.dists, self.shadow_diam, self.component):
            if arr.shape[0] != n:
                raise ValueError("cell arrays must have equal length")
        if len(self.adjacency) != n:
            raise ValueError("one adjacency row per cell")
        if np.any(self.shadow_diam < 0):
            raise ValueError("shadow diameters are nonnegative")
        return self

    @property
    def sides(self) -> np.ndarray:
        return 2.0 ** (-self.levels.astype(float))

    @property
    def diams(self) -> np.ndarray:
        return np.sqrt(2.0) * self.sides

    def __len__(self) -> int:
        return int(self.centers.shape[0])
