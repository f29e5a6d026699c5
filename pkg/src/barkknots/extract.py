"""Classical CT cross-section processing: pith recentring, denoising, bark
contour, knot blobs, cross-slice tracking and track-size smoothing.

Pixel coordinates follow :mod:`barkknots.raster`: ``x`` is the column,
``y`` the row, both measured at pixel centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import DomainError, ExtractionError
from .raster import Ellipse


@dataclass(frozen=True)
class ExtractConfig:
    """Defaults for the classical pipeline (none are prescribed upstream)."""

    foreground_fraction: float = 0.5  # of the median foreground density
    rays: int = 360
    ray_step: float = 0.25
    density_threshold: float = 0.65
    min_area: int = 4
    bark_margin: float = 1.0
    max_gap: int = 3
    max_jump_px: float = 10.0
    size_window: int = 5
    min_track_length: int = 1


DEFAULT_EXTRACT = ExtractConfig()


@dataclass(frozen=True)
class EllipseDetection:
    z_index: int
    box: tuple  # (x0, y0, x1, y1)
    ellipse: Ellipse
    score: float = 1.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise DomainError(f"degenerate box {self.box}")

    @property
    def center(self) -> tuple:
        return (self.ellipse.cx, self.ellipse.cy)


@dataclass(frozen=True)
class TrackEntry:
    z_index: int
    detection: EllipseDetection
    interpolated: bool = False


@dataclass
class KnotTrack:
    entries: list = field(default_factory=list)

    @property
    def z_indices(self) -> list:
        return [e.z_index for e in self.entries]

    @property
    def last(self) -> TrackEntry:
        return self.entries[-1]

    def __len__(self):
        return len(self.entries)


# ----------------------------------------------------------------------------
# per-slice operations


def _foreground_threshold(image, fraction):
    pos = image[image > 0]
    if pos.size == 0:
        raise ExtractionError("image has no foreground")
    return fraction * float(np.median(pos))


def pith_shift(image, fraction: float = DEFAULT_EXTRACT.foreground_fraction) -> tuple:
    """Integer ``(dy, dx)`` bringing the log centroid within 1 px of the centre.

    The centroid is taken over the thresholded log region.  Images whose
    centroid is already within 1 px are left alone (zero shift).
    """
    image = np.asarray(image, dtype=float)
    mask = image > _foreground_threshold(image, fraction)
    rows, cols = np.nonzero(mask)
    oy = (image.shape[0] - 1) / 2.0 - rows.mean()
    ox = (image.shape[1] - 1) / 2.0 - cols.mean()
    if math.hypot(oy, ox) <= 1.0:
        return 0, 0
    return int(round(oy)), int(round(ox))


def shift_image(image, dy: int, dx: int):
    """Translate by whole pixels, filling vacated borders with zeros."""
    out = np.zeros_like(image)
    h, w = image.shape
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def recenter_to_pith(image, fraction: float = DEFAULT_EXTRACT.foreground_fraction):
    image = np.asarray(image)
    dy, dx = pith_shift(image, fraction)
    return shift_image(image, dy, dx)


def median_filter_3x3(image):
    image = np.asarray(image)
    if image.ndim != 2 or min(image.shape) < 3:
        raise DomainError("median filter needs a 2-D image of at least 3x3")
    return ndimage.median_filter(image, size=3, mode="nearest")


def ray_directions(rays: int):
    """Unit vectors ``(dy, dx)`` for ``rays`` equally spaced azimuths.

    For ``rays`` divisible by 4 the later quadrants are exact 90-degree
    rotations of the first so rotated images give identical samples.
    """
    if rays % 4 == 0:
        q = rays // 4
        ang = np.arange(q) * (2 * math.pi / rays)
        c, s = np.cos(ang), np.sin(ang)
        dx = np.concatenate([c, -s, -c, s])
        dy = np.concatenate([s, c, -s, -c])
    else:
        ang = np.arange(rays) * (2 * math.pi / rays)
        dx, dy = np.cos(ang), np.sin(ang)
    return dy, dx


def extract_bark_contour(image, rays: int = 360, threshold=None, step: float = DEFAULT_EXTRACT.ray_step):
    """Bark radius (pixels) along ``rays`` azimuths from the image centre.

    Each ray is sampled bilinearly; the contour is the outermost crossing
    of ``threshold``, refined by linear interpolation between samples.
    Rays that never exceed the threshold are filled from their neighbours.
    """
    if rays < 8:
        raise DomainError("at least 8 rays are required")
    image = np.asarray(image, dtype=float)
    if threshold is None:
        threshold = _foreground_threshold(image, DEFAULT_EXTRACT.foreground_fraction)
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    n = int(math.ceil(math.hypot(h, w) / 2.0 / step)) + 1
    t = np.arange(n) * step
    dy, dx = ray_directions(rays)
    ys = cy + dy[:, None] * t[None, :]
    xs = cx + dx[:, None] * t[None, :]
    prof = ndimage.map_coordinates(image, [ys, xs], order=1, mode="constant", cval=0.0)
    above = prof >= threshold
    radii = np.full(rays, np.nan)
    any_above = above.any(axis=1)
    last = n - 1 - np.argmax(above[:, ::-1], axis=1)
    for i in np.flatnonzero(any_above):
        j = last[i]
        if j + 1 < n:
            v0, v1 = prof[i, j], prof[i, j + 1]
            frac = (v0 - threshold) / (v0 - v1) if v0 != v1 else 0.0
            radii[i] = (j + frac) * step
        else:
            radii[i] = j * step
    if not any_above.any():
        raise ExtractionError("no ray crosses the bark threshold")
    if not any_above.all():
        idx = np.arange(rays)
        good = np.flatnonzero(any_above)
        radii = np.interp(idx, good, radii[good], period=rays)
    return radii


def fit_ellipse_to_bbox(box) -> Ellipse:
    x0, y0, x1, y1 = box
    if not (x1 > x0 and y1 > y0):
        raise DomainError(f"box {box} has zero area")
    return Ellipse((x0 + x1) / 2.0, (y0 + y1) / 2.0, (x1 - x0) / 2.0, (y1 - y0) / 2.0, 0.0)


def inside_contour_mask(shape, contour, margin: float = 0.0):
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.indices(shape)
    dy, dx = rows - cy, cols - cx
    r = np.hypot(dy, dx)
    ang = np.mod(np.arctan2(dy, dx), 2 * math.pi)
    rays = len(contour)
    pos = ang / (2 * math.pi) * rays
    limit = np.interp(pos, np.arange(rays + 1), np.append(contour, contour[0]))
    return r <= limit - margin


def detect_knot_blobs(
    image,
    density_threshold: float = DEFAULT_EXTRACT.density_threshold,
    min_area: int = DEFAULT_EXTRACT.min_area,
    z_index: int = 0,
    contour=None,
    bark_margin: float = DEFAULT_EXTRACT.bark_margin,
) -> list:
    """Connected high-density components inside the bark, as detections."""
    image = np.asarray(image, dtype=float)
    mask = image > density_threshold
    if not mask.any():
        return []
    if contour is None:
        contour = extract_bark_contour(image)
    mask &= inside_contour_mask(image.shape, contour, bark_margin)
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    out = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[sl] == lab
        area = int(comp.sum())
        if area < min_area:
            continue
        ys, xs = np.nonzero(comp)
        y0, x0 = sl[0].start + ys.min(), sl[1].start + xs.min()
        y1, x1 = sl[0].start + ys.max(), sl[1].start + xs.max()
        box = (x0 - 0.5, y0 - 0.5, x1 + 0.5, y1 + 0.5)
        score = float(np.clip(image[sl][comp].mean(), 0.0, 1.0))
        out.append(EllipseDetection(z_index, tuple(float(v) for v in box), fit_ellipse_to_bbox(box), score))
    return out


# ----------------------------------------------------------------------------
# tracking


def _interpolate(d0: EllipseDetection, d1: EllipseDetection, t: float, z_index: int) -> EllipseDetection:
    box = tuple((1 - t) * a + t * b for a, b in zip(d0.box, d1.box))
    e0, e1 = d0.ellipse, d1.ellipse
    ell = Ellipse(
        (1 - t) * e0.cx + t * e1.cx,
        (1 - t) * e0.cy + t * e1.cy,
        (1 - t) * e0.a + t * e1.a,
        (1 - t) * e0.b + t * e1.b,
        (1 - t) * e0.angle + t * e1.angle,
    )
    return EllipseDetection(z_index, box, ell, (1 - t) * d0.score + t * d1.score)


def track_knots(per_slice, max_gap: int = DEFAULT_EXTRACT.max_gap, max_jump_px: float = DEFAULT_EXTRACT.max_jump_px) -> list:
    """Link per-slice detections into tracks by greedy nearest centroid.

    ``per_slice[z]`` holds the detections of slice ``z``.  Within each slice
    candidate (track, detection) pairs closer than ``max_jump_px`` are
    accepted in increasing distance order.  A track may skip up to
    ``max_gap`` slices; skipped slices get linearly interpolated entries.
    """
    tracks: list = []
    active: list = []
    for z, dets in enumerate(per_slice):
        active = [t for t in active if z - t.last.z_index - 1 <= max_gap]
        pairs = []
        for ti, tr in enumerate(active):
            lx, ly = tr.last.detection.center
            for di, d in enumerate(dets):
                dist = math.hypot(d.center[0] - lx, d.center[1] - ly)
                if dist <= max_jump_px:
                    pairs.append((dist, ti, di))
        pairs.sort()
        used_t, used_d = set(), set()
        for dist, ti, di in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            tr = active[ti]
            prev = tr.last
            gap = z - prev.z_index
            for g in range(1, gap):
                tr.entries.append(TrackEntry(prev.z_index + g, _interpolate(prev.detection, dets[di], g / gap, prev.z_index + g), True))
            tr.entries.append(TrackEntry(z, dets[di], False))
        for di, d in enumerate(dets):
            if di not in used_d:
                tr = KnotTrack([TrackEntry(z, d, False)])
                tracks.append(tr)
                active.append(tr)
    return tracks


def sliding_median(values, window: int):
    """Centred running median with edge replication."""
    h = window // 2
    padded = np.pad(np.asarray(values, dtype=float), h, mode="edge")
    return np.median(sliding_window_view(padded, window), axis=-1)


def smooth_track_sizes(track: KnotTrack, window: int = DEFAULT_EXTRACT.size_window) -> KnotTrack:
    """Sliding median of the semi-axes along the track; centres unchanged."""
    if window < 3 or window % 2 == 0:
        raise DomainError("window must be an odd integer >= 3")
    if not track.entries:
        return KnotTrack([])
    a = np.array([e.detection.ellipse.a for e in track.entries])
    b = np.array([e.detection.ellipse.b for e in track.entries])
    a_s = sliding_median(a, window)
    b_s = sliding_median(b, window)
    out = []
    for e, sa, sb in zip(track.entries, a_s, b_s):
        el = replace(e.detection.ellipse, a=float(sa), b=float(sb))
        if el.angle == 0.0:
            box = (el.cx - sa, el.cy - sb, el.cx + sa, el.cy + sb)
        else:
            box = el.bounding_box()
        out.append(replace(e, detection=replace(e.detection, ellipse=el, box=tuple(float(v) for v in box))))
    return KnotTrack(out)


def filter_short_tracks(tracks, min_length: int = DEFAULT_EXTRACT.min_track_length) -> list:
    return [t for t in tracks if len(t) >= min_length]


# ----------------------------------------------------------------------------
# pipeline


@dataclass
class StackResult:
    contours: np.ndarray  # [slice, ray], pixels
    shifts: list  # per-slice (dy, dx) applied by recentring
    detections: list  # per-slice detections, input-frame coordinates
    tracks: list


def _unshift(det: EllipseDetection, dy: int, dx: int) -> EllipseDetection:
    x0, y0, x1, y1 = det.box
    el = replace(det.ellipse, cx=det.ellipse.cx - dx, cy=det.ellipse.cy - dy)
    return replace(det, box=(x0 - dx, y0 - dy, x1 - dx, y1 - dy), ellipse=el)


def process_stack(stack, config: ExtractConfig = DEFAULT_EXTRACT) -> StackResult:
    """Recentre, denoise, measure the bark and detect/track knots per slice.

    ``stack`` is ``[z, row, col]``.  Reported coordinates are in the input
    frame (recentring shifts are undone).
    """
    contours, shifts, per_slice = [], [], []
    for z, img in enumerate(np.asarray(stack)):
        dy, dx = pith_shift(img, config.foreground_fraction)
        work = median_filter_3x3(shift_image(img, dy, dx))
        contour = extract_bark_contour(work, config.rays, step=config.ray_step)
        dets = detect_knot_blobs(work, config.density_threshold, config.min_area, z, contour, config.bark_margin)
        contours.append(contour)
        shifts.append((dy, dx))
        per_slice.append([_unshift(d, dy, dx) for d in dets])
    tracks = track_knots(per_slice, config.max_gap, config.max_jump_px)
    tracks = [smooth_track_sizes(t, config.size_window) for t in filter_short_tracks(tracks, config.min_track_length)]
    return StackResult(np.array(contours), shifts, per_slice, tracks)


def recovered_instances(tracks, annotations, max_dist: float = 2.0) -> tuple:
    """``(recovered, total)`` ground-truth knot-slice instances.

    An annotated ellipse counts as recovered when some track entry in the
    same slice has its centre within ``max_dist`` pixels; each entry may
    recover at most one annotation.
    """
    by_slice: dict = {}
    for t in tracks:
        for e in t.entries:
            by_slice.setdefault(e.z_index, []).append(e.detection.center)
    hit = total = 0
    for ann in annotations:
        cands = list(by_slice.get(ann.z_index, []))
        for el in ann.ellipses:
            total += 1
            if not cands:
                continue
            d = [math.hypot(cx - el.cx, cy - el.cy) for cx, cy in cands]
            j = int(np.argmin(d))
            if d[j] < max_dist:
                hit += 1
                cands.pop(j)
    return hit, total
