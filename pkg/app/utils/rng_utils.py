"""Counter-based RNG keyed by (seed, replicate, stream).

Each replicate draws from its own Philox stream so results do not depend on
the order in which replicates are scheduled or on the number of workers.
"""
from typing import Iterable

import numpy as np

_MASK64 = (1 << 64) - 1

# stream ids
BROWNIAN = 1
BESSEL = 2
RADIAL_BESSEL = 3
DRIVING = 4
FORCE_POINTS = 5
FIELD_RADIAL = 6
FIELD_LATERAL = 7
FIELD_MODES = 8
WALKS = 9
EXPERIMENT = 10
CANDIDATES = 11


def keyed_generator(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def replicate_generators(seed: int, replicates: Iterable[int], stream: int) -> list[np.random.Generator]:
    return [keyed_generator(seed, r, stream) for r in replicates]


def stacked_normals(seed: int, replicates: Iterable[int], stream: int, size: int) -> np.ndarray:
    """各レプリケートの正規乱数を行方向に積む (n_rep, size)"""
    rows = [keyed_generator(seed, r, stream).standard_normal(size) for r in replicates]
    if not rows:
        return np.empty((0, size))
    return np.vstack(rows)


def derive_seed(seed: int, *keys: int) -> int:
    """子実験に渡す64bit seed"""
    ss = np.random.SeedSequence([int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
