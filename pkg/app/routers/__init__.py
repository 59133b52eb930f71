# API routers
# Re-export routers for external usage
from . import densities, experiments, health

__all__ = ["densities", "experiments", "health"]
