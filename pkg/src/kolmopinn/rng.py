"""Counter-based normal draws.

Every draw is addressed by an absolute stream index, so a block of
samples depends only on ``(seed, index)`` and never on how the work
was chunked or which thread produced it.
"""

import zlib

import numpy as np
from scipy.special import ndtri

_DRAWS_PER_COUNTER = 4  # Philox4x64 emits four 64-bit words per counter value


def uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Open-interval uniforms at stream positions ``start .. start+count-1``."""
    if count <= 0:
        return np.empty(0)
    block, skip = divmod(int(start), _DRAWS_PER_COUNTER)
    bitgen = np.random.Philox(key=int(seed), counter=[block, 0, 0, 0])
    raw = bitgen.random_raw(count + skip)[skip:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, start: int, count: int) -> np.ndarray:
    """Standard normals by inversion of :func:`uniforms`."""
    return ndtri(uniforms(seed, start, count))


def path_normals(seed: int, first_path: int, n_paths: int, per_path: int) -> np.ndarray:
    """Normals for paths ``first_path .. first_path+n_paths-1``, shape ``(n_paths, per_path)``.

    Path ``m`` owns stream positions ``[m*per_path, (m+1)*per_path)``.
    """
    flat = normals(seed, first_path * per_path, n_paths * per_path)
    return flat.reshape(n_paths, per_path)


def _label(v) -> int:
    return zlib.crc32(v.encode()) if isinstance(v, str) else int(v)


def sub_seed(seed: int, *labels) -> int:
    """Derive an independent 63-bit key from a seed and integer or string labels."""
    ss = np.random.SeedSequence([int(seed), *[_label(v) for v in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
