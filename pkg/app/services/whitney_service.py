"""Whitney 分解・準双曲距離・Jones-Smirnov 影の和"""
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

from app.models.conformal import DomainRaster, WhitneyDecomposition
from app.services.conformal_service import boundary_points
from app.utils.errors import InvalidParameterError, OutOfDomainError
from app.utils.io_utils import write_csv

logger = logging.getLogger(__name__)

SHADOW_DIRECTIONS = 32
# 採用条件 1.5 diam <= dist(center) < 4 diam（正方形からの距離は center 距離 - diam/2 以上）
_ACCEPT = 1.5
_KEY_SHIFT = 20
_SQRT2 = math.sqrt(2.0)


def _key(level: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    return (level.astype(np.int64) << (2 * _KEY_SHIFT)) | (i.astype(np.int64) << _KEY_SHIFT) | j.astype(np.int64)


def _pixel_lookup(raster: DomainRaster, z: np.ndarray, grid: np.ndarray) -> np.ndarray:
    px = raster.pixel
    cols = np.clip(((z.real + raster.extent) / px).astype(int), 0, raster.size - 1)
    rows = np.clip(((raster.extent - z.imag) / px).astype(int), 0, raster.size - 1)
    return grid[rows, cols]


def whitney_decompose(raster: DomainRaster, max_level: int, min_level: int = 0) -> WhitneyDecomposition:
    """マスク内の極大 dyadic 正方形を粗い順に採る（同じラスタなら結果は決定的）"""
    if not 0 <= min_level <= max_level <= 16:
        raise InvalidParameterError("need 0 <= min_level <= max_level <= 16")
    bpts = boundary_points(raster)
    tree = cKDTree(np.column_stack([bpts.real, bpts.imag]))
    labels, _ = ndimage.label(raster.mask)
    origin = 2.0 ** math.ceil(math.log2(raster.extent))

    side = 2.0 ** -min_level
    n0 = int(round(2 * origin / side))
    ii, jj = np.meshgrid(np.arange(n0), np.arange(n0), indexing="ij")
    cand_i, cand_j = ii.ravel(), jj.ravel()

    centers, levels, dists = [], [], []
    for level in range(min_level, max_level + 1):
        side = 2.0 ** -level
        diam = _SQRT2 * side
        c = (cand_i + 0.5) * side - origin + 1j * ((cand_j + 0.5) * side - origin)
        d, _ = tree.query(np.column_stack([c.real, c.imag]))
        inside = _pixel_lookup(raster, c, raster.mask) & (np.abs(c.real) < raster.extent) & (np.abs(c.imag) < raster.extent)
        accept = inside & (d >= _ACCEPT * diam)
        centers.append(c[accept])
        levels.append(np.full(int(accept.sum()), level))
        dists.append(d[accept])
        # 境界を含まず外側にある正方形は捨てる
        outside = ~inside & (d > diam / 2)
        keep = ~accept & ~outside
        ci, cj = cand_i[keep], cand_j[keep]
        cand_i = np.concatenate([2 * ci, 2 * ci + 1, 2 * ci, 2 * ci + 1])
        cand_j = np.concatenate([2 * cj, 2 * cj, 2 * cj + 1, 2 * cj + 1])

    centers = np.concatenate(centers)
    levels = np.concatenate(levels).astype(np.int64)
    dists = np.concatenate(dists)
    if centers.size == 0:
        raise InvalidParameterError("no Whitney cells at this max_level")
    component = _pixel_lookup(raster, centers, labels).astype(np.int64)
    used = np.unique(component)
    if used.size > 1:
        logger.warning(f"raster {raster.name} has {used.size} free components; decomposing each separately")
    adjacency = _adjacency(centers, levels, origin, min_level, max_level)
    logger.info(f"whitney {raster.name}: {centers.size} cells, levels {min_level}..{max_level}")
    return WhitneyDecomposition(
        centers=centers, levels=levels, dists=dists, shadow_diam=np.zeros(centers.size),
        adjacency=adjacency, boundary_points=bpts, component=component, max_level=max_level,
        raster_name=raster.name,
    )


def _locate(points: np.ndarray, keys_sorted: np.ndarray, order: np.ndarray, origin: float,
            min_level: int, max_level: int) -> np.ndarray:
    """各点を含むセルの index（なければ -1）"""
    found = np.full(points.size, -1, dtype=np.int64)
    for level in range(min_level, max_level + 1):
        scale = 2.0 ** level
        i = np.floor((points.real + origin) * scale)
        j = np.floor((points.imag + origin) * scale)
        valid = (i >= 0) & (j >= 0) & (i < (1 << _KEY_SHIFT)) & (j < (1 << _KEY_SHIFT))
        k = _key(np.full(points.size, level), np.where(valid, i, 0), np.where(valid, j, 0))
        pos = np.clip(np.searchsorted(keys_sorted, k), 0, keys_sorted.size - 1)
        hit = valid & (keys_sorted[pos] == k) & (found < 0)
        found[hit] = order[pos[hit]]
    return found


def _cell_keys(centers: np.ndarray, levels: np.ndarray, origin: float) -> np.ndarray:
    scale = 2.0 ** levels.astype(float)
    i = np.floor((centers.real + origin) * scale)
    j = np.floor((centers.imag + origin) * scale)
    return _key(levels, i, j)


def _adjacency(centers: np.ndarray, levels: np.ndarray, origin: float, min_level: int, max_level: int) -> list:
    """辺と角のすぐ外側をプローブして隣接セルを集める（8 近傍）"""
    keys = _cell_keys(centers, levels, origin)
    order = np.argsort(keys)
    keys_sorted = keys[order]
    side = 2.0 ** -levels.astype(float)
    eps = side * 1e-6
    frac = (np.arange(8) + 0.5) / 8 - 0.5
    probes = []
    for f in frac:
        probes += [(0.5, f), (-0.5, f), (f, 0.5), (f, -0.5)]
    probes += [(0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, -0.5)]
    rows, cols = [], []
    for px, py in probes:
        off = (px * side + np.sign(px) * eps * (abs(px) == 0.5)) + 1j * (py * side + np.sign(py) * eps * (abs(py) == 0.5))
        hit = _locate(centers + off, keys_sorted, order, origin, min_level, max_level)
        ok = hit >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(hit[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    pairs = np.unique(np.column_stack([np.concatenate([rows, cols]), np.concatenate([cols, rows])]), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    split = np.searchsorted(pairs[:, 0], np.arange(centers.size + 1))
    return [pairs[split[k]:split[k + 1], 1] for k in range(centers.size)]


def _graph(dec: WhitneyDecomposition, weights: str) -> csr_matrix:
    n = len(dec)
    rows = np.concatenate([np.full(a.size, k) for k, a in enumerate(dec.adjacency)]) if n else np.empty(0, int)
    cols = np.concatenate(dec.adjacency) if n else np.empty(0, int)
    if weights == "unit":
        w = np.ones(rows.size)
    elif weights == "qh":
        # 中心間線分上の 1/dist の台形近似
        w = np.abs(dec.centers[rows] - dec.centers[cols]) * 0.5 * (1 / dec.dists[rows] + 1 / dec.dists[cols])
    else:
        raise InvalidParameterError(f"unknown edge weights: {weights}")
    return csr_matrix((w, (rows, cols)), shape=(n, n))


def _origin(dec: WhitneyDecomposition) -> float:
    ext = float(np.max(np.abs(np.concatenate([dec.centers.real, dec.centers.imag])))) + 1.0
    return 2.0 ** math.ceil(math.log2(ext))


def locate_cell(dec: WhitneyDecomposition, z) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(z, dtype=complex))
    levels = dec.levels
    # セル境界が揃う 2 冪の原点なら分解時と違ってよい
    origin = _origin(dec)
    keys = _cell_keys(dec.centers, levels, origin)
    order = np.argsort(keys)
    return _locate(pts, keys[order], order, origin, int(levels.min()), int(levels.max()))


def _containing(dec: WhitneyDecomposition, z: complex) -> int:
    idx = int(locate_cell(dec, z)[0])
    if idx < 0:
        raise OutOfDomainError(f"{z} is not inside any Whitney cell")
    return idx


def quasihyperbolic_distance(dec: WhitneyDecomposition, z: complex, w: complex, weights: str = "unit") -> float:
    """セルグラフの最短路長。同一セル内は |z - w| / dist(Q) (<= 1)"""
    a, b = _containing(dec, z), _containing(dec, w)
    if a == b:
        return float(abs(complex(z) - complex(w)) / (dec.dists[a] - dec.diams[a] / 2))
    dist = shortest_path(_graph(dec, weights), directed=False, unweighted=(weights == "unit"), indices=a)
    return float(dist[b])


def _shortest_path_tree(dec: WhitneyDecomposition, base: int, weights: str) -> tuple[np.ndarray, np.ndarray]:
    """base からの最短路木。親候補が複数あるときは (level, cx, cy) の辞書順で最小"""
    graph = _graph(dec, weights)
    dist = shortest_path(graph, directed=False, unweighted=(weights == "unit"), indices=base)
    rank = np.empty(len(dec), dtype=np.int64)
    rank[np.lexsort((dec.centers.imag, dec.centers.real, dec.levels))] = np.arange(len(dec))
    coo = graph.tocoo()
    i, j, w = coo.row, coo.col, coo.data
    tol = 1e-9 * np.maximum(1.0, np.abs(dist[i]))
    on_path = np.isfinite(dist[i]) & (np.abs(dist[j] + w - dist[i]) <= tol)
    i, j = i[on_path], j[on_path]
    sel = np.lexsort((rank[j], i))
    i, j = i[sel], j[sel]
    first = np.ones(i.size, dtype=bool)
    first[1:] = i[1:] != i[:-1]
    parent = np.full(len(dec), -1, dtype=np.int64)
    parent[i[first]] = j[first]
    parent[base] = -1
    return parent, dist


def shadow_diameters(dec: WhitneyDecomposition, base: int, weights: str = "qh") -> np.ndarray:
    """最短路木の部分木に含まれる終端セルの境界端点集合の直径（K 方向の幅の最大）"""
    parent, dist = _shortest_path_tree(dec, base, weights)
    reach = np.isfinite(dist)
    terminal = reach & (dec.levels == dec.max_level)
    tree = cKDTree(np.column_stack([dec.boundary_points.real, dec.boundary_points.imag]))
    _, nearest = tree.query(np.column_stack([dec.centers.real, dec.centers.imag]))
    ends = dec.boundary_points[nearest]
    angles = math.pi * np.arange(SHADOW_DIRECTIONS) / SHADOW_DIRECTIONS
    proj = (ends[:, None] * np.exp(-1j * angles)[None, :]).real
    hi = np.where(terminal[:, None], proj, -np.inf)
    lo = np.where(terminal[:, None], proj, np.inf)
    # 木の深い順に親へ畳み込む
    depth = _depths(parent, reach)
    for d in range(int(depth.max(initial=0)), 0, -1):
        nodes = np.nonzero(depth == d)[0]
        np.maximum.at(hi, parent[nodes], hi[nodes])
        np.minimum.at(lo, parent[nodes], lo[nodes])
    width = np.where(np.isfinite(hi) & np.isfinite(lo), hi - lo, 0.0)
    return width.max(axis=1)


def _depths(parent: np.ndarray, reach: np.ndarray) -> np.ndarray:
    depth = np.full(parent.size, -1, dtype=np.int64)
    roots = reach & (parent < 0)
    depth[roots] = 0
    frontier = np.nonzero(roots)[0]
    d = 0
    children = [[] for _ in range(parent.size)]
    for k in np.nonzero(parent >= 0)[0]:
        children[parent[k]].append(k)
    while frontier.size:
        d += 1
        nxt = np.array([c for f in frontier for c in children[f]], dtype=np.int64)
        depth[nxt] = d
        frontier = nxt
    return depth


def js_shadow_sum(dec: WhitneyDecomposition, base: complex, weights: str = "qh") -> dict:
    """sum s(Q)^2 と int dist_qh(w, base) dw のセル求積"""
    b = _containing(dec, base)
    same = dec.component == dec.component[b]
    sub = _restrict(dec, same)
    b_sub = int(np.nonzero(np.nonzero(same)[0] == b)[0][0])
    shadows = shadow_diameters(sub, b_sub, weights)
    _, dist = _shortest_path_tree(sub, b_sub, weights)
    area = sub.sides ** 2
    qh = np.where(np.isfinite(dist), dist, 0.0)
    qh[b_sub] = abs(complex(base) - sub.centers[b_sub]) / sub.dists[b_sub]
    full = np.zeros(len(dec))
    full[same] = shadows
    return {
        "sum_s2": float(np.sum(shadows ** 2)),
        "qh_integral": float(np.sum(area * qh)),
        "n_cells": int(same.sum()),
        "n_terminal": int(np.sum(sub.levels == sub.max_level)),
        "decomposition": dec.model_copy(update={"shadow_diam": full}),
    }


def _restrict(dec: WhitneyDecomposition, keep: np.ndarray) -> WhitneyDecomposition:
    if keep.all():
        return dec
    new_index = np.full(len(dec), -1, dtype=np.int64)
    new_index[keep] = np.arange(int(keep.sum()))
    adjacency = [new_index[a[keep[a]]] for a, k in zip(dec.adjacency, keep) if k]
    return WhitneyDecomposition(
        centers=dec.centers[keep], levels=dec.levels[keep], dists=dec.dists[keep],
        shadow_diam=dec.shadow_diam[keep], adjacency=adjacency, boundary_points=dec.boundary_points,
        component=dec.component[keep], max_level=dec.max_level, raster_name=dec.raster_name,
    )


def level_counts(dec: WhitneyDecomposition) -> dict[int, int]:
    levels, counts = np.unique(dec.levels, return_counts=True)
    return {int(l): int(c) for l, c in zip(levels, counts)}


def check_invariants(dec: WhitneyDecomposition) -> np.ndarray:
    """diam <= dist(Q, boundary) < 4 diam を満たすセルの bool 配列（dist は境界点への厳密距離）"""
    tree = cKDTree(np.column_stack([dec.boundary_points.real, dec.boundary_points.imag]))
    half = dec.sides / 2
    ok = np.ones(len(dec), dtype=bool)
    for k in range(len(dec)):
        c, h = dec.centers[k], half[k]
        r = float(dec.dists[k]) + dec.diams[k]
        idx = tree.query_ball_point([c.real, c.imag], r)
        p = dec.boundary_points[idx] - c
        dx = np.maximum(np.abs(p.real) - h, 0.0)
        dy = np.maximum(np.abs(p.imag) - h, 0.0)
        dQ = float(np.min(np.hypot(dx, dy))) if len(idx) else r
        ok[k] = dec.diams[k] <= dQ < 4 * dec.diams[k]
    return ok


def coverage_radius(dec: WhitneyDecomposition) -> float:
    """これより境界から遠い領域内の点はどれかのセルに含まれる

    max_level の正方形が不採用なら中心距離 < 1.5 diam、点は中心から diam/2 以内なので
    境界距離 < 2 diam = 2 sqrt(2) 2^{-L} < 3 2^{-L}。
    """
    return 3.0 * 2.0 ** -dec.max_level


def export_decomposition(dec: WhitneyDecomposition, path: Path | str) -> Path:
    rows = zip(dec.centers.real, dec.centers.imag, dec.levels, dec.shadow_diam)
    return write_csv(path, ["cx", "cy", "level", "shadow_diam"], rows)


def disk_qh_integral_oracle() -> float:
    """2 pi int_0^1 r log(1/(1-r)) dr"""
    return 1.5 * math.pi


def base_point(dec: WhitneyDecomposition, prefer: Optional[complex] = None) -> complex:
    """prefer を含むセルがあればそれ、なければ最大セルの中心"""
    if prefer is not None and locate_cell(dec, prefer)[0] >= 0:
        return complex(prefer)
    k = int(np.lexsort((dec.centers.imag, dec.centers.real, dec.levels))[0])
    return complex(dec.centers[k])
