"""Sampling the analytic log fields into grids, volumes and annotations.

Pixel conventions for every square image (cross-sections, voxel slices):
image ``[row, col]`` with ``col`` along +x and ``row`` along +y; pixel
centres sit at ``(index + 0.5 - size/2) * 2*extent/size`` in world units,
so the pith lies at pixel coordinate ``size/2 - 0.5``.  Azimuth is
``atan2(y, x)``.  Volumes are indexed ``data[x, y, z]`` with ``z`` counted
upward from the log base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .errors import DimensionError, DomainError
from .synthesis import (
    TWO_PI,
    DEFAULT_CONFIG,
    LogSpec,
    density_at,
    knot_exit_points,
    surface_radius,
    wrap_angle,
)

PATCH_SHAPE = (64, 64)
PATCH_WIDTH_DEG = 15.0
PATCH_WIDTH = math.pi / 12  # PATCH_WIDTH_DEG in radians
VOLUME_DIMS = (256, 256, 64)
# half-width of the square field of view; leaves air around the largest log
EXTENT = 1.25
R_MAX = 1.1


def patch_px_per_degree(width_deg: float = PATCH_WIDTH_DEG, cols: int = PATCH_SHAPE[1]) -> float:
    # degrees in, so the default case is the exact quotient 64 / 15
    return cols / width_deg


def voxel_px_per_degree(nx: int = VOLUME_DIMS[0]) -> float:
    """Upper bound on angular sampling of a log filling an ``nx`` wide grid."""
    return math.pi * nx / 360.0


@dataclass(frozen=True)
class SurfacePatch:
    grid: np.ndarray
    theta_center: float
    theta_width: float
    z_range: tuple

    @property
    def px_per_degree(self) -> float:
        return patch_px_per_degree(math.degrees(self.theta_width), self.grid.shape[1])


@dataclass(frozen=True)
class HalfPlaneTarget:
    grid: np.ndarray
    theta0: float
    r_max: float
    z_range: tuple


@dataclass(frozen=True)
class CrossSection:
    image: np.ndarray
    z: float
    extent: float

    @property
    def px_per_unit(self) -> float:
        return self.image.shape[0] / (2.0 * self.extent)


@dataclass
class DensityVolume:
    data: np.ndarray  # [x, y, z]
    extent: float = EXTENT
    z_range: tuple = (0.0, DEFAULT_CONFIG.height)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DimensionError(f"volume must be 3-D, got shape {self.data.shape}")

    @property
    def dims(self) -> tuple:
        return tuple(int(d) for d in self.data.shape)

    @property
    def spacing(self) -> tuple:
        nx, ny, nz = self.dims
        return (2 * self.extent / nx, 2 * self.extent / ny, (self.z_range[1] - self.z_range[0]) / nz)

    @property
    def origin(self) -> tuple:
        sx, sy, sz = self.spacing
        return (-self.extent + sx / 2, -self.extent + sy / 2, self.z_range[0] + sz / 2)


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float  # semi-axis along ``angle``
    b: float
    angle: float = 0.0

    def bounding_box(self) -> tuple:
        c, s = math.cos(self.angle), math.sin(self.angle)
        hx = math.hypot(self.a * c, self.b * s)
        hy = math.hypot(self.a * s, self.b * c)
        return (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)

    def contains(self, x, y):
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx, dy = np.asarray(x) - self.cx, np.asarray(y) - self.cy
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


@dataclass(frozen=True)
class SliceAnnotation:
    z_index: int
    z: float
    ellipses: tuple
    boxes: tuple
    knot_ids: tuple = ()


def pixel_centers(size: int, extent: float = EXTENT) -> np.ndarray:
    return (np.arange(size) + 0.5 - size / 2.0) * (2.0 * extent / size)


def world_to_pixel(x, y, size: int, extent: float = EXTENT):
    s = size / (2.0 * extent)
    off = size / 2.0 - 0.5
    return np.asarray(x) * s + off, np.asarray(y) * s + off


def row_heights(n_rows: int, z_range) -> np.ndarray:
    """Row centres of a z-axis grid whose first row is the top."""
    lo, hi = z_range
    return hi - (np.arange(n_rows) + 0.5) * (hi - lo) / n_rows


def slice_heights(nz: int, z_range) -> np.ndarray:
    """Voxel-layer centres counted upward from the base."""
    lo, hi = z_range
    return lo + (np.arange(nz) + 0.5) * (hi - lo) / nz


def render_surface_patch(
    spec: LogSpec,
    theta0: float,
    width: float = PATCH_WIDTH,
    shape=PATCH_SHAPE,
    z_range=None,
) -> SurfacePatch:
    rows, cols = shape
    z_range = (0.0, spec.height) if z_range is None else tuple(z_range)
    theta = theta0 - width / 2.0 + np.arange(cols) * (width / cols)
    z = row_heights(rows, z_range)
    grid = surface_radius(spec, theta[None, :], z[:, None])
    return SurfacePatch(grid, float(theta0), float(width), z_range)


def render_half_plane(
    spec: LogSpec,
    theta0: float,
    r_max: float = R_MAX,
    shape=PATCH_SHAPE,
    z_range=None,
) -> HalfPlaneTarget:
    rows, cols = shape
    z_range = (0.0, spec.height) if z_range is None else tuple(z_range)
    r = np.arange(cols) * (r_max / cols)
    z = row_heights(rows, z_range)
    grid = density_at(spec, r[None, :], theta0, z[:, None])
    return HalfPlaneTarget(grid, float(theta0), float(r_max), z_range)


def _polar_grid(size: int, extent: float):
    c = pixel_centers(size, extent)
    x = c[None, :]
    y = c[:, None]
    return np.hypot(x, y), np.arctan2(y, x)


def render_cross_section(spec: LogSpec, z: float, size: int = 512, extent: float = EXTENT) -> CrossSection:
    if not 0.0 <= z <= spec.height:
        raise DomainError(f"z must lie in [0, {spec.height}], got {z}")
    r, theta = _polar_grid(size, extent)
    img = density_at(spec, r, theta, z)
    return CrossSection(img, float(z), float(extent))


def render_stack(spec: LogSpec, size: int = 512, nz: int = 64, extent: float = EXTENT) -> np.ndarray:
    """Cross-sections at every voxel layer, bottom first: ``[z, row, col]``."""
    r, theta = _polar_grid(size, extent)
    exits = knot_exit_points(spec)
    zs = slice_heights(nz, (0.0, spec.height))
    return np.stack([density_at(spec, r, theta, z, exits=exits) for z in zs])


def voxelize(spec: LogSpec, dims=VOLUME_DIMS, extent: float = EXTENT):
    """``(input, target)`` volumes.

    The input marks the bark shell (cells whose centre is within half a
    voxel of the surface) with the cell's distance from the log axis divided
    by ``extent``; every other cell is 0.  The target holds the density at
    each cell centre.
    """
    nx, ny, nz = dims
    cx = pixel_centers(nx, extent)
    cy = pixel_centers(ny, extent)
    x, y = np.meshgrid(cx, cy, indexing="ij")
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    half_voxel = 0.5 * (2.0 * extent / nx)
    zs = slice_heights(nz, (0.0, spec.height))
    exits = knot_exit_points(spec)
    target = np.empty((nx, ny, nz), dtype=np.float32)
    shell = np.zeros((nx, ny, nz), dtype=np.float32)
    for k, z in enumerate(zs):
        target[:, :, k] = density_at(spec, r, theta, z, exits=exits)
        bark = surface_radius(spec, theta, z, exits=exits)
        on_shell = np.abs(r - bark) <= half_voxel
        shell[:, :, k] = np.where(on_shell, r / extent, 0.0)
    zr = (0.0, spec.height)
    return DensityVolume(shell, extent, zr), DensityVolume(target, extent, zr)


def sequence_views(volume: DensityVolume, length: int = 64) -> list:
    """Cross-sections ``[y, x]`` ordered from the top of the log down."""
    nz = volume.dims[2]
    if nz != length:
        raise DimensionError(f"expected {length} z-layers, got {nz}")
    return [volume.data[:, :, nz - 1 - i].T for i in range(nz)]


def restack(views, extent: float = EXTENT, z_range=(0.0, DEFAULT_CONFIG.height)) -> DensityVolume:
    data = np.stack([v.T for v in views[::-1]], axis=2)
    return DensityVolume(data, extent, tuple(z_range))


def nearest_slice_index(thetas, slice_angles) -> np.ndarray:
    """Index of the half-plane azimuth closest to each azimuth in ``thetas``."""
    slice_angles = np.asarray(slice_angles, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    d = np.abs(wrap_angle(thetas[..., None] - slice_angles))
    return np.argmin(d, axis=-1)


def reconstruct_volume(slices, dims=VOLUME_DIMS, extent: float = EXTENT, z_range=None) -> DensityVolume:
    """Rebuild a volume from ``(theta0, HalfPlaneTarget)`` pairs.

    Every voxel copies, by bilinear interpolation in ``(r, z)``, the
    half-plane whose azimuth is nearest its own.
    """
    slices = list(slices)
    if not slices:
        raise DomainError("at least one half-plane is required")
    angles = np.array([float(t) for t, _ in slices])
    planes = np.stack([np.asarray(hp.grid, dtype=float) for _, hp in slices])
    first = slices[0][1]
    r_max = first.r_max
    if z_range is None:
        z_range = first.z_range
    n, rows, cols = planes.shape
    nx, ny, nz = dims
    cx = pixel_centers(nx, extent)
    cy = pixel_centers(ny, extent)
    x, y = np.meshgrid(cx, cy, indexing="ij")
    r = np.hypot(x, y)
    owner = nearest_slice_index(np.arctan2(y, x), angles)
    col = r / (r_max / cols)
    lo, hi = first.z_range
    zs = slice_heights(nz, z_range)
    out = np.empty((nx, ny, nz), dtype=np.float32)
    for k, z in enumerate(zs):
        row = np.clip((hi - z) / ((hi - lo) / rows) - 0.5, 0.0, rows - 1)
        coords = np.stack([owner.astype(float), np.full_like(col, row), col])
        out[:, :, k] = ndimage.map_coordinates(planes, coords, order=1, mode="constant", cval=0.0)
    return DensityVolume(out, extent, tuple(z_range))


def _radial_extent(knot, z):
    """Radial bounds of a knot's cut by the plane at height ``z``."""
    lower = lambda r: knot.centerline(r) + knot.tube_radius(r) - z  # noqa: E731
    upper = lambda r: knot.centerline(r) - knot.tube_radius(r) - z  # noqa: E731
    r_lo = 0.0 if lower(0.0) >= 0 else _increasing_root(lower)
    r_hi = _increasing_root(upper)
    return r_lo, r_hi


def _increasing_root(f):
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return optimize.brentq(f, 0.0, hi, xtol=1e-12) if f(0.0) < 0 else 0.0


def knot_cross_section(spec: LogSpec, knot, z: float, exits=None):
    """Analytic ellipse (world units) of ``knot`` cut at height ``z``.

    Centre is the centre-line crossing; the radial semi-axis spans the
    exact radial extent of the cut and the tangential one is the tube radius
    there.  ``None`` when the centre line does not cross ``z`` or the cut
    does not lie strictly between the pith and the bark (cuts touching the
    pith are shared by every knot passing through it and have no
    well-defined ellipse).
    """
    r_c = float(knot.radius_at_height(z))
    if not np.isfinite(r_c):
        return None
    r_lo, r_hi = _radial_extent(knot, z)
    bark = float(surface_radius(spec, knot.azimuth, z, exits=exits))
    if r_lo <= 0.0 or r_hi > bark:
        return None
    c, s = math.cos(knot.azimuth), math.sin(knot.azimuth)
    return Ellipse(r_c * c, r_c * s, 0.5 * (r_hi - r_lo), float(knot.tube_radius(r_c)), knot.azimuth)


def annotate_slices(spec: LogSpec, size: int = 512, nz: int = 64, extent: float = EXTENT) -> list:
    """Ground-truth ellipses per voxel layer, in pixel coordinates."""
    exits = knot_exit_points(spec)
    scale = size / (2.0 * extent)
    out = []
    for zi, z in enumerate(slice_heights(nz, (0.0, spec.height))):
        ellipses, boxes, ids = [], [], []
        for ki, kn in enumerate(spec.knots):
            e = knot_cross_section(spec, kn, float(z), exits)
            if e is None:
                continue
            px, py = world_to_pixel(e.cx, e.cy, size, extent)
            ep = Ellipse(float(px), float(py), e.a * scale, e.b * scale, e.angle)
            x0, y0, x1, y1 = ep.bounding_box()
            lim = size - 0.5
            boxes.append((max(x0, -0.5), max(y0, -0.5), min(x1, lim), min(y1, lim)))
            ellipses.append(ep)
            ids.append(ki)
        out.append(SliceAnnotation(zi, float(z), tuple(ellipses), tuple(boxes), tuple(ids)))
    return out


def patch_pairs(spec: LogSpec, thetas, r_max: float = R_MAX, shape=PATCH_SHAPE, width: float = PATCH_WIDTH):
    """Stacked ``(patches, targets)`` arrays for the given centre azimuths."""
    xs, ys = [], []
    for t in thetas:
        xs.append(render_surface_patch(spec, t, width, shape).grid)
        ys.append(render_half_plane(spec, t, r_max, shape).grid)
    return np.stack(xs), np.stack(ys)


def uniform_azimuths(n: int, offset: float = 0.0) -> np.ndarray:
    return np.mod(offset + np.arange(n) * (TWO_PI / n), TWO_PI)
