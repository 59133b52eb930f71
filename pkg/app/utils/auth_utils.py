from fastapi import HTTPException
from app.config import settings

def require_token(x_api_token: str | None):
    """実験実行 API のトークン認証（未設定ならバイパス）"""
    if not settings.API_TOKEN:
        return

    if x_api_token != settings.API_TOKEN:
        raise HTTPException(status_code=401, detail="invalid api token")
