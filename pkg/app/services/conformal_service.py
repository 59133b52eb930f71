"""walk-on-spheres による調和測度・脱出確率と、領域ラスタの生成"""
import logging
import math
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from app.config import settings
from app.models.conformal import DomainRaster, ObstacleSet, ReachRadius
from app.utils import rng_utils
from app.utils.errors import InvalidParameterError, InvalidStartError
from app.utils.io_utils import read_packed_raster, read_pgm, write_packed_raster, write_pgm
from app.utils.stats_utils import binomial_stderr, wilson_interval

logger = logging.getLogger(__name__)

WALK_CHUNK = 4096
_TREE_NEIGHBORS = 16

# (component names, absorption points) -> bool mask
Predicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# predicates

def hits(*names: str) -> Predicate:
    wanted = set(names)

    def pred(comp: np.ndarray, point: np.ndarray) -> np.ndarray:
        return np.isin(comp, list(wanted))
    return pred


def hits_outside_interval(name: str, a: float, b: float) -> Predicate:
    """直線成分の [a, b] 外で吸収"""
    def pred(comp: np.ndarray, point: np.ndarray) -> np.ndarray:
        return (comp == name) & ((point.real < a) | (point.real > b))
    return pred


def hits_arc(theta0: float, theta1: float, center: complex = 0j, name: str = "circle") -> Predicate:
    """円成分の偏角 [theta0, theta1) (mod 2pi) で吸収"""
    span = (theta1 - theta0) % (2 * math.pi) or 2 * math.pi

    def pred(comp: np.ndarray, point: np.ndarray) -> np.ndarray:
        ang = (np.angle(point - center) - theta0) % (2 * math.pi)
        return (comp == name) & (ang < span)
    return pred


# ---------------------------------------------------------------------------
# distances

class _Polyline:
    """折れ線への距離（セグメント数が多いときは中点の kd-tree で下界を取る）"""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=complex)
        if pts.size == 1:
            pts = np.concatenate([pts, pts])
        self.a = pts[:-1]
        self.b = pts[1:]
        self.ab = self.b - self.a
        self.len2 = np.abs(self.ab) ** 2
        self.arclength = np.concatenate([[0.0], np.cumsum(np.sqrt(self.len2))])
        self.half = float(np.sqrt(self.len2.max()) / 2)
        mids = (self.a + self.b) / 2
        self.tree = cKDTree(np.column_stack([mids.real, mids.imag])) if self.a.size > 64 else None

    def _project(self, z: np.ndarray, nn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, ab, len2 = self.a[nn], self.ab[nn], self.len2[nn]
        zz = z[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(len2 > 0, ((zz - a).conj() * ab).real / len2, 0.0)
        t = np.clip(t, 0.0, 1.0)
        return np.abs(zz - (a + t * ab)), t

    def distance(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(距離の下界, 最近セグメント, セグメント内パラメータ)"""
        if self.tree is None:
            d, t = self._project(z, np.broadcast_to(np.arange(self.a.size), (z.size, self.a.size)))
            k = np.argmin(d, axis=1)
            rows = np.arange(z.size)
            return d[rows, k], k, t[rows, k]
        K = min(_TREE_NEIGHBORS, self.a.size)
        dmid, nn = self.tree.query(np.column_stack([z.real, z.imag]), k=K)
        dmid, nn = np.atleast_2d(dmid), np.atleast_2d(nn)
        d, t = self._project(z, nn)
        k = np.argmin(d, axis=1)
        rows = np.arange(z.size)
        exact = d[rows, k]
        # K 番目より遠いセグメントは中点距離 - 半長 以上離れている
        bound = np.maximum(dmid[:, -1] - self.half, 0.0) if K < self.a.size else np.inf
        return np.minimum(exact, bound), nn[rows, k], t[rows, k]

    def parameter(self, seg: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.arclength[seg] + t * np.sqrt(self.len2[seg])


class _Geometry:
    """ObstacleSet (+ 到達目標) の成分ごとの距離"""

    def __init__(self, obstacles: ObstacleSet, target: Optional[ReachRadius] = None):
        self.obstacles = obstacles
        self.target = target
        self.names = list(obstacles.component_names)
        self.polylines = [_Polyline(p) for p in obstacles.polylines]
        if target is not None:
            self.names.append("target")

    def inside(self, z: np.ndarray) -> np.ndarray:
        ok = np.ones(z.shape, dtype=bool)
        obs = self.obstacles
        if obs.real_line:
            ok &= z.imag > 0
        if obs.circle is not None:
            c, R = obs.circle
            ok &= np.abs(z - c) < R
        if obs.strip_height is not None:
            ok &= (z.imag > 0) & (z.imag < obs.strip_height)
        if self.target is not None:
            ok &= np.abs(z - self.target.center) < self.target.radius
        return ok

    def distances(self, z: np.ndarray) -> tuple[np.ndarray, list]:
        cols = []
        extra = []
        obs = self.obstacles
        if obs.real_line:
            cols.append(z.imag)
        if obs.circle is not None:
            c, R = obs.circle
            cols.append(R - np.abs(z - c))
        if obs.strip_height is not None:
            cols += [z.imag, obs.strip_height - z.imag]
        for line in self.polylines:
            d, seg, t = line.distance(z)
            cols.append(d)
            extra.append((seg, t))
        if self.target is not None:
            cols.append(self.target.radius - np.abs(z - self.target.center))
        return np.column_stack(cols), extra

    def project(self, comp: int, z: np.ndarray, seg=None, t=None) -> tuple[np.ndarray, np.ndarray]:
        """吸収点（成分上への射影）と成分上のパラメータ"""
        name = self.names[comp]
        if name in ("real_line", "strip_bottom"):
            return z.real + 0j, z.real
        if name == "strip_top":
            return z.real + 1j * self.obstacles.strip_height, z.real
        if name == "circle":
            c, R = self.obstacles.circle
            ang = np.angle(z - c)
            return c + R * np.exp(1j * ang), ang
        if name == "target":
            ang = np.angle(z - self.target.center)
            return self.target.center + self.target.radius * np.exp(1j * ang), ang
        line = self.polylines[int(name.split("_")[1])]
        return line.a[seg] + t * line.ab[seg], line.parameter(seg, t)


# ---------------------------------------------------------------------------
# walk-on-spheres

def _check_start(geom: _Geometry, start: complex, delta: float) -> None:
    z = np.array([complex(start)])
    if not geom.inside(z)[0]:
        raise InvalidStartError(f"start {start} is outside the free region")
    d, _ = geom.distances(z)
    if d.min() <= delta:
        raise InvalidStartError(f"start {start} lies on an absorbing set")


def _walk_chunk(geom: _Geometry, start: complex, n: int, rng: np.random.Generator,
                delta: float, max_steps: int) -> dict:
    z = np.full(n, complex(start))
    comp = np.full(n, -1, dtype=np.int64)
    point = np.full(n, np.nan + 0j)
    param = np.full(n, np.nan)
    alive = np.arange(n)
    for _ in range(max_steps):
        if alive.size == 0:
            break
        d, extra = geom.distances(z[alive])
        k = np.argmin(d, axis=1)
        r = d[np.arange(alive.size), k]
        done = r < delta
        if done.any():
            n_poly = len(geom.polylines)
            first_poly = len(geom.names) - n_poly - (1 if geom.target is not None else 0)
            for c in np.unique(k[done]):
                sel = done & (k == c)
                idx = alive[sel]
                seg = t = None
                if first_poly <= c < first_poly + n_poly:
                    seg, t = extra[c - first_poly][0][sel], extra[c - first_poly][1][sel]
                comp[idx] = c
                point[idx], param[idx] = geom.project(int(c), z[idx], seg, t)
        move = alive[~done]
        theta = rng.uniform(0.0, 2 * math.pi, size=move.size)
        z[move] += r[~done] * np.exp(1j * theta)
        alive = move
    return {"comp": comp, "point": point, "param": param, "unfinished": int(alive.size)}


def simulate_walks(obstacles: ObstacleSet, start: complex, walks: int, seed: int = 0, replicate: int = 0,
                   target: Optional[ReachRadius] = None, max_steps: Optional[int] = None) -> dict:
    """walk-on-spheres を walks 本走らせ、吸収成分・吸収点を返す

    ウォークは WALK_CHUNK 本ごとに (seed, replicate, WALKS, chunk) で鍵付けする。
    """
    if walks < 1:
        raise InvalidParameterError("walks must be >= 1")
    geom = _Geometry(obstacles, target)
    delta = obstacles.delta_abs
    _check_start(geom, start, delta)
    max_steps = max_steps or settings.WOS_MAX_STEPS
    parts = []
    for chunk, lo in enumerate(range(0, walks, WALK_CHUNK)):
        rng = rng_utils.keyed_generator(seed, replicate, rng_utils.WALKS, chunk)
        parts.append(_walk_chunk(geom, start, min(WALK_CHUNK, walks - lo), rng, delta, max_steps))
    comp = np.concatenate([p["comp"] for p in parts])
    unfinished = sum(p["unfinished"] for p in parts)
    if unfinished:
        logger.warning(f"{unfinished} of {walks} walks did not finish in {max_steps} steps")
    names = np.array(geom.names + ["unfinished"], dtype=object)
    return {
        "component": names[np.where(comp >= 0, comp, len(geom.names))].astype(str),
        "point": np.concatenate([p["point"] for p in parts]),
        "param": np.concatenate([p["param"] for p in parts]),
        "unfinished": unfinished,
    }


def escape_probability(obstacles: ObstacleSet, start: complex, success, walks: int, seed: int = 0,
                       replicate: int = 0, confidence: float = 0.95) -> dict:
    """P[success を吸収前に満たす]。success は述語か ReachRadius"""
    target = success if isinstance(success, ReachRadius) else None
    pred = hits("target") if target is not None else success
    res = simulate_walks(obstacles, start, walks, seed, replicate, target=target)
    ok = np.asarray(pred(res["component"], res["point"]), dtype=bool)
    k = int(ok.sum())
    lo, hi = wilson_interval(k, walks, confidence)
    return {
        "p": k / walks,
        "stderr": binomial_stderr(k, walks),
        "ci_lo": lo,
        "ci_hi": hi,
        "successes": k,
        "walks": walks,
        "unfinished": res["unfinished"],
    }


def harmonic_measure(obstacles: ObstacleSet, start: complex, partition: Dict[str, Predicate], walks: int,
                     seed: int = 0, replicate: int = 0, target: Optional[ReachRadius] = None) -> dict:
    """吸収分布を partition のラベルへ集計（先にマッチしたラベル優先）"""
    res = simulate_walks(obstacles, start, walks, seed, replicate, target=target)
    labels = np.full(walks, "other", dtype=object)
    free = np.ones(walks, dtype=bool)
    for label, pred in partition.items():
        sel = free & np.asarray(pred(res["component"], res["point"]), dtype=bool)
        labels[sel] = label
        free &= ~sel
    labels[res["component"] == "unfinished"] = "unfinished"
    names = list(partition) + [x for x in ("other", "unfinished") if np.any(labels == x)]
    counts = {name: int(np.sum(labels == name)) for name in names}
    return {
        "mass": {name: counts[name] / walks for name in names},
        "stderr": {name: binomial_stderr(counts[name], walks) for name in names},
        "counts": counts,
        "walks": walks,
    }


def side_measures(curves: Sequence[np.ndarray], z: complex, walks: int, seed: int = 0, replicate: int = 0,
                  radius: Optional[float] = None, delta: Optional[float] = None) -> np.ndarray:
    """z から見た各曲線の調和測度（曲線に当たったウォークで正規化）"""
    radius = radius or 2.0 * settings.R_MACRO
    obstacles = ObstacleSet(polylines=list(curves), delta_abs=delta or settings.WOS_DELTA)
    res = simulate_walks(obstacles, z, walks, seed, replicate, target=ReachRadius(radius=radius))
    counts = np.array([np.sum(res["component"] == f"polyline_{i}") for i in range(len(curves))], dtype=float)
    total = counts.sum()
    return counts / total if total else np.zeros(len(curves))


def admissible_points(curves: Sequence[np.ndarray], candidates: Sequence[complex], walks: int, seed: int = 0,
                      replicate: int = 0, threshold: float = 0.25) -> np.ndarray:
    """両側の調和測度がともに threshold 以上の候補点"""
    keep = []
    for j, z in enumerate(candidates):
        try:
            m = side_measures(curves, z, walks, seed=rng_utils.derive_seed(seed, j), replicate=replicate)
        except InvalidStartError:
            continue
        if m.size >= 2 and np.all(m >= threshold):
            keep.append(complex(z))
    return np.array(keep, dtype=complex)


# ---------------------------------------------------------------------------
# rasters

def _grid_centres(size: int, extent: float) -> np.ndarray:
    idx = (np.arange(size) + 0.5) * (2 * extent / size) - extent
    return idx[None, :] + 1j * idx[::-1, None]


def _boundary_pixels(mask: np.ndarray, centres: np.ndarray) -> np.ndarray:
    edge = ~mask & ndimage.binary_dilation(mask)
    return centres[edge]


def rasterize_disk(size: int, extent: float = 1.0625, boundary_samples: Optional[int] = None) -> DomainRaster:
    centres = _grid_centres(size, extent)
    n = boundary_samples or 16 * size
    circle = np.exp(2j * math.pi * np.arange(n) / n)
    return DomainRaster(mask=np.abs(centres) < 1.0, extent=extent, boundary_override=circle, name="disk")


def rasterize_square(size: int, extent: float = 1.0625, boundary_samples: Optional[int] = None) -> DomainRaster:
    centres = _grid_centres(size, extent)
    mask = (np.abs(centres.real) < 1.0) & (np.abs(centres.imag) < 1.0)
    n = (boundary_samples or 16 * size) // 4
    s = -1 + 2 * (np.arange(n) + 0.5) / n
    edges = np.concatenate([s - 1j, 1 + 1j * s, -s + 1j, -1 - 1j * s])
    return DomainRaster(mask=mask, extent=extent, boundary_override=edges, name="square")


def half_plane_to_disk(z, scale: float = 1.0):
    """H -> D, 0 -> -i, infinity -> i, i*scale -> 0"""
    z = np.asarray(z, dtype=complex)
    return 1j * (z - 1j * scale) / (z + 1j * scale)


def _densify(points: np.ndarray, spacing: float) -> np.ndarray:
    pts = np.asarray(points, dtype=complex)
    seg = np.abs(np.diff(pts))
    reps = np.maximum(1, np.ceil(seg / spacing).astype(int))
    out = [pts[i] + (pts[i + 1] - pts[i]) * np.arange(reps[i]) / reps[i] for i in range(seg.size)]
    return np.concatenate(out + [pts[-1:]])


def rasterize_curve_complement(curve: np.ndarray, size: int, extent: float = 1.0625, thicken: int = 1,
                               name: str = "curve_complement", pick: complex = -1.0 + 0j) -> DomainRaster:
    """D \\ curve の pick に最も近い連結成分（曲線は thicken 画素だけ太らせる）"""
    centres = _grid_centres(size, extent)
    pixel = 2 * extent / size
    dense = _densify(curve, pixel / 2)
    cols = np.clip(((dense.real + extent) / pixel).astype(int), 0, size - 1)
    rows = np.clip(((extent - dense.imag) / pixel).astype(int), 0, size - 1)
    wall = np.zeros((size, size), dtype=bool)
    wall[rows, cols] = True
    if thicken > 0:
        wall = ndimage.binary_dilation(wall, iterations=thicken)
    free = (np.abs(centres) < 1.0) & ~wall
    labels, n = ndimage.label(free)
    if n == 0:
        raise InvalidParameterError("curve leaves no free pixels")
    # pick に近い画素のうち最初に見つかった成分
    order = np.argsort(np.abs(centres - pick), axis=None)
    flat = labels.ravel()[order]
    chosen = int(flat[flat > 0][0])
    mask = labels == chosen
    n_circle = 16 * size
    circle = np.exp(2j * math.pi * np.arange(n_circle) / n_circle)
    boundary = np.concatenate([_densify(curve, pixel / 4), circle])
    return DomainRaster(mask=mask, extent=extent, boundary_override=boundary, name=name)


def rasterize_sle4_left_domain(trace_points: np.ndarray, size: int, scale: Optional[float] = None,
                               thicken: int = 1, extent: float = 1.0625) -> DomainRaster:
    """H 上の chordal SLE4 トレースを D へ写し、-i -> i 曲線の左側成分を返す

    トレースの終点から i までは線分で閉じる。
    """
    pts = np.asarray(trace_points, dtype=complex)
    if scale is None:
        scale = max(float(np.max(np.abs(pts))) / 16.0, 1e-12)
    curve = half_plane_to_disk(pts, scale)
    curve = np.concatenate([curve, [1j]])
    return rasterize_curve_complement(curve, size, extent=extent, thicken=thicken, name="sle4_left", pick=-1.0 + 0j)


def boundary_points(raster: DomainRaster) -> np.ndarray:
    if raster.boundary_override is not None:
        return np.asarray(raster.boundary_override, dtype=complex)
    return _boundary_pixels(raster.mask, raster.pixel_centres())


def save_raster(raster: DomainRaster, path: Path | str, fmt: str = "binary") -> Path:
    if fmt == "binary":
        return write_packed_raster(path, raster.mask, raster.extent)
    if fmt == "pgm":
        return write_pgm(path, raster.mask)
    raise InvalidParameterError(f"unknown raster format: {fmt}")


def load_raster(path: Path | str, extent: float = 1.0625, name: Optional[str] = None) -> DomainRaster:
    """.pgm は Pillow、それ以外は SLELAB01 packed raster として読む"""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        mask = read_pgm(path)
    else:
        mask, extent = read_packed_raster(path)
    return DomainRaster(mask=mask, extent=extent, name=name or path.stem)
