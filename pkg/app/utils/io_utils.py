"""CSV / SLELAB01 バイナリ / PGM の入出力"""
import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from app.utils.errors import InvalidParameterError

logger = logging.getLogger(__name__)

MAGIC = b"SLELAB01"
HEADER_DTYPE = np.dtype([
    ("magic", "S8"),
    ("kind", "<i4"),
    ("n", "<i4"),
    ("p1", "<f8"),
    ("p2", "<f8"),
])
assert HEADER_DTYPE.itemsize == 32

# kind ids (scheme ids for drivings)
KIND_IDS = {
    "sle": 1,
    "sle_rho": 2,
    "whole_plane_rho": 3,
    "reverse_sle_kappa": 4,
    "field": 20,
    "raster": 30,
    "points": 40,
}


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: Path | str) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.asarray(rows, dtype=float).reshape(len(rows), len(header))


def write_binary(path: Path | str, kind: str, columns: np.ndarray, p1: float, p2: float) -> Path:
    """little-endian f64 の (n, ncol) 配列を 32byte ヘッダ付きで書き出す"""
    if kind not in KIND_IDS:
        raise InvalidParameterError(f"unknown binary kind: {kind}")
    data = np.asarray(columns, dtype="<f8")
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    data = np.ascontiguousarray(data)
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["kind"] = KIND_IDS[kind]
    header["n"] = data.shape[0]
    header["p1"] = p1
    header["p2"] = p2
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(header.tobytes())
        fh.write(data.tobytes())
    return path


def read_header(raw: bytes) -> dict:
    if len(raw) < HEADER_DTYPE.itemsize:
        raise InvalidParameterError("file too short for SLELAB01 header")
    header = np.frombuffer(raw[:HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if bytes(header["magic"]) != MAGIC:
        raise InvalidParameterError("bad magic, not a SLELAB01 file")
    kinds = {v: k for k, v in KIND_IDS.items()}
    return {
        "kind": kinds.get(int(header["kind"]), "unknown"),
        "n": int(header["n"]),
        "p1": float(header["p1"]),
        "p2": float(header["p2"]),
    }


def read_binary(path: Path | str) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    meta = read_header(raw)
    body = np.frombuffer(raw[HEADER_DTYPE.itemsize:], dtype="<f8")
    n = meta["n"]
    ncol = body.size // n if n else 0
    return meta, body.reshape(n, ncol).copy()


def write_packed_raster(path: Path | str, mask: np.ndarray, extent: float) -> Path:
    """bool ラスタを packbits して保存（p1=extent, p2=列数）"""
    mask = np.asarray(mask, dtype=bool)
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["kind"] = KIND_IDS["raster"]
    header["n"] = mask.shape[0]
    header["p1"] = extent
    header["p2"] = float(mask.shape[1])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.packbits(mask, axis=None).tobytes())
    return path


def read_packed_raster(path: Path | str) -> tuple[np.ndarray, float]:
    raw = Path(path).read_bytes()
    meta = read_header(raw)
    if meta["kind"] != "raster":
        raise InvalidParameterError(f"expected raster file, got {meta['kind']}")
    rows, cols = meta["n"], int(meta["p2"])
    bits = np.unpackbits(np.frombuffer(raw[HEADER_DTYPE.itemsize:], dtype=np.uint8), count=rows * cols)
    return bits.reshape(rows, cols).astype(bool), meta["p1"]


def write_pgm(path: Path | str, mask: np.ndarray) -> Path:
    """領域内=255, 境界/外部=0 のグレースケール PGM"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))
    img.save(path, format="PPM")
    return path


def read_pgm(path: Path | str, threshold: int = 127) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr > threshold
