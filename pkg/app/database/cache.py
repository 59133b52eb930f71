"""SLELAB01 形式のディスクキャッシュ（駆動関数・場のラスタ・領域ラスタ）"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from app.config import settings
from app.models.conformal import DomainRaster
from app.models.loewner import DrivingFunction
from app.utils.errors import InvalidParameterError
from app.utils.io_utils import read_binary, read_packed_raster, write_binary, write_packed_raster

logger = logging.getLogger(__name__)


def cache_root() -> Path:
    return Path(settings.CACHE_DIR)


def cache_key(kind: str, **params) -> str:
    """パラメータの正規化 JSON の sha1"""
    blob = json.dumps({"kind": kind, **params}, sort_keys=True, default=str)
    return f"{kind}-{hashlib.sha1(blob.encode()).hexdigest()[:16]}"


# ---------------------------------------------------------------------------
# driving functions

def save_driving(driving: DrivingFunction, key: str) -> Path:
    """sle / whole_plane_rho のみ（force point 付きは再生成する）"""
    if driving.scheme == "whole_plane_rho":
        cols = np.column_stack([np.angle(driving.W), np.angle(driving.O)])
    elif driving.scheme == "sle":
        cols = np.asarray(driving.W, dtype=float)
    else:
        raise InvalidParameterError(f"scheme {driving.scheme} is not cached")
    return write_binary(cache_root() / f"{key}.bin", driving.scheme, cols, driving.dt, driving.t0)


def load_driving(key: str, kappa: float, seed: int = 0, replicate: int = 0) -> Optional[DrivingFunction]:
    path = cache_root() / f"{key}.bin"
    if not path.exists():
        return None
    meta, cols = read_binary(path)
    if meta["kind"] == "whole_plane_rho":
        return DrivingFunction(dt=meta["p1"], t0=meta["p2"], W=np.exp(1j * cols[:, 0]), O=np.exp(1j * cols[:, 1]),
                               kappa=kappa, scheme="whole_plane_rho", seed=seed, replicate=replicate)
    return DrivingFunction(dt=meta["p1"], t0=meta["p2"], W=cols[:, 0], kappa=kappa, scheme=meta["kind"],
                           seed=seed, replicate=replicate)


def cached_driving(builder: Callable[[], DrivingFunction], kappa: float, seed: int, replicate: int,
                   **params) -> DrivingFunction:
    key = cache_key("driving", kappa=kappa, seed=seed, replicate=replicate, **params)
    hit = load_driving(key, kappa, seed, replicate)
    if hit is not None:
        logger.info(f"driving cache hit: {key}")
        return hit
    driving = builder()
    save_driving(driving, key)
    return driving


# ---------------------------------------------------------------------------
# field rasters

def save_field_raster(key: str, xs: np.ndarray, ys: np.ndarray, values: np.ndarray) -> Path:
    """values[ny, nx] を 1 列に並べ、p1=x0, p2=dx で保存（ys は別ファイル）"""
    write_binary(cache_root() / f"{key}.ys.bin", "points", ys, float(len(xs)), 0.0)
    dx = float(xs[1] - xs[0]) if len(xs) > 1 else 1.0
    return write_binary(cache_root() / f"{key}.bin", "field", np.asarray(values).ravel(), float(xs[0]), dx)


def load_field_raster(key: str) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    path = cache_root() / f"{key}.bin"
    if not path.exists():
        return None
    ymeta, ys = read_binary(cache_root() / f"{key}.ys.bin")
    meta, values = read_binary(path)
    nx = int(ymeta["p1"])
    xs = meta["p1"] + meta["p2"] * np.arange(nx)
    return xs, ys[:, 0], values[:, 0].reshape(-1, nx)


# ---------------------------------------------------------------------------
# domain rasters

def save_domain_raster(raster: DomainRaster, key: str) -> Path:
    path = write_packed_raster(cache_root() / f"{key}.raster", raster.mask, raster.extent)
    if raster.boundary_override is not None:
        b = np.asarray(raster.boundary_override, dtype=complex)
        write_binary(cache_root() / f"{key}.boundary.bin", "points", np.column_stack([b.real, b.imag]), 0.0, 0.0)
    return path


def load_domain_raster(key: str, name: Optional[str] = None) -> Optional[DomainRaster]:
    path = cache_root() / f"{key}.raster"
    if not path.exists():
        return None
    mask, extent = read_packed_raster(path)
    boundary = None
    bpath = cache_root() / f"{key}.boundary.bin"
    if bpath.exists():
        _, cols = read_binary(bpath)
        boundary = cols[:, 0] + 1j * cols[:, 1]
    return DomainRaster(mask=mask, extent=extent, boundary_override=boundary, name=name or key)


def cached_domain_raster(builder: Callable[[], DomainRaster], **params) -> DomainRaster:
    key = cache_key("raster", **params)
    hit = load_domain_raster(key, name=params.get("name"))
    if hit is not None:
        logger.info(f"raster cache hit: {key}")
        return hit
    raster = builder()
    save_domain_raster(raster, key)
    return raster


def clear_cache() -> int:
    root = cache_root()
    if not root.exists():
        return 0
    removed = 0
    for path in root.iterdir():
        if path.is_file():
            path.unlink()
            removed += 1
    return removed
