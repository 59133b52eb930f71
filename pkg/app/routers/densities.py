from typing import Dict

from fastapi import APIRouter, Query, Request

from app.models.stochastic import DENSITY_PARAMS, DensitySpec
from app.services import stochastic_service
from app.utils.errors import InvalidParameterError

router = APIRouter(tags=["densities"])


def _spec(kind: str, request: Request, reserved: set[str]) -> DensitySpec:
    if kind not in DENSITY_PARAMS:
        raise InvalidParameterError(f"unknown density kind: {kind}")
    params: Dict[str, float] = {}
    for name, raw in request.query_params.items():
        if name in reserved:
            continue
        try:
            params[name] = float(raw)
        except ValueError:
            raise InvalidParameterError(f"parameter {name} must be numeric")
    try:
        return DensitySpec(kind=kind, params=params)
    except ValueError as exc:
        raise InvalidParameterError(str(exc))


@router.get("/{kind}")
def density_value(kind: str, request: Request, x: float = Query(...)):
    """単一点での密度値"""
    spec = _spec(kind, request, {"x"})
    return {"ok": True, "kind": kind, "params": spec.params, "x": x, "value": stochastic_service.density(spec, x)}


@router.get("/{kind}/table")
def density_table(kind: str, request: Request, lo: float = Query(...), hi: float = Query(...), n: int = Query(50)):
    """等間隔の密度表 (x, density)"""
    spec = _spec(kind, request, {"lo", "hi", "n"})
    rows = stochastic_service.density_table(spec, lo, hi, n)
    return {"ok": True, "kind": kind, "params": spec.params, "columns": ["x", "density"], "rows": rows}
