from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, model_validator


class MeasureEstimate(BaseModel):
    region: Dict[str, Any]
    epsilon: float
    gamma: float
    value: float
    replicate_count: int = 1
    stderr: float = 0.0
    critical: bool = False
    clamped_fraction: Optional[float] = None
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        if self.value < 0 or self.stderr < 0:
            raise ValueError("measure estimates and stderr are nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (0 < self.gamma <= 2):
            raise ValueError("gamma must lie in (0, 2]")
        return self
