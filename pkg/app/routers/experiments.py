import logging
from typing import Optional

from fastapi import APIRouter, Header, HTTPException

from app.models.lab import RunConfig
from app.services import lab_service
from app.utils.auth_utils import require_token

router = APIRouter(tags=["experiments"])
logger = logging.getLogger(__name__)


@router.get("")
def list_experiments():
    """実行可能な実験の一覧"""
    return {"ok": True, "experiments": sorted(lab_service.EXPERIMENTS)}


@router.post("/{experiment}")
def run(experiment: str, body: dict, x_api_token: Optional[str] = Header(default=None)):
    """RunConfig を受け取り Report を返す（バッチ実行、同期）"""
    require_token(x_api_token)
    if experiment not in lab_service.EXPERIMENTS:
        raise HTTPException(status_code=404, detail=f"unknown experiment: {experiment}")
    cfg = RunConfig(**{**body, "experiment": experiment})
    logger.info(f"api run {experiment} seed={cfg.seed}")
    report = lab_service.run_experiment(cfg)
    return report.model_dump(mode="json")
