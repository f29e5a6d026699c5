"""Patch/target pairs for the 2D model and their input encoding."""

import numpy as np

from .. import raster
from ..synthesis import TWO_PI

# bark radii are centred and scaled so typical inputs are O(1)
INPUT_OFFSET = 0.85
INPUT_SCALE = 0.1
COORD_CLIP = 3.0


def encode_patches(grids, r_max: float = raster.R_MAX):
    """``(N, 3, H, W)`` network input.

    Channel 0 is the bark radius of each patch pixel.  Channel 1 is the
    radial position of each output column and channel 2 the same position
    measured from the bark at the patch centre, row by row.  A stack of small
    convolutions cannot carry the centre column across the whole width, so
    the bark-relative frame puts the surface edge where the target needs it.
    """
    g = np.asarray(grids, dtype=np.float64)
    if g.ndim == 2:
        g = g[None]
    n, rows, cols = g.shape
    r = np.arange(cols) * (r_max / cols)
    # radii far from the bark carry no edge information; clipping keeps inputs O(1)
    coord = np.clip((r - INPUT_OFFSET) / INPUT_SCALE, -COORD_CLIP, COORD_CLIP)
    coord = np.broadcast_to(coord, (n, rows, cols))
    centre = g[:, :, cols // 2 : cols // 2 + 1]
    rel = np.clip((r - centre) / INPUT_SCALE, -COORD_CLIP, COORD_CLIP)
    return np.stack([(g - INPUT_OFFSET) / INPUT_SCALE, coord, rel], axis=1)


def log_azimuths(spec, n: int) -> np.ndarray:
    """``n`` evenly spaced azimuths with a per-log offset drawn from its seed."""
    offset = np.random.default_rng([spec.seed, n]).uniform(0.0, TWO_PI / n)
    return raster.uniform_azimuths(n, offset)


def build_patch_dataset(specs, azimuths_per_log: int = 8, dtype=np.float32):
    """Encoded patches and half-plane targets for every spec, stacked."""
    xs, ys = [], []
    for spec in specs:
        x, y = raster.patch_pairs(spec, log_azimuths(spec, azimuths_per_log))
        xs.append(encode_patches(x))
        ys.append(y)
    return np.concatenate(xs).astype(dtype), np.concatenate(ys).astype(dtype)
