"""Evaluation metrics and reproducible dataset splits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

SPLIT_FRACTIONS = (0.80, 0.04, 0.16)


def _values(v):
    return np.asarray(getattr(v, "data", v), dtype=np.float64)


def rmse(a, b) -> float:
    """Voxel-to-voxel root mean square error of two equally shaped arrays."""
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def _check_box(box):
    x0, y0, x1, y1 = box
    if not (x1 > x0 and y1 > y0):
        raise DomainError(f"degenerate box {box}")


def iou(box_a, box_b) -> float:
    """Intersection over union of ``(x0, y0, x1, y1)`` boxes."""
    _check_box(box_a)
    _check_box(box_b)
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


@dataclass(frozen=True)
class Scored:
    """A box in a given image.  ``image`` is any hashable key, usually
    ``(log_id, z_index)``; ``score`` is ignored for ground truths."""

    image: tuple
    box: tuple
    score: float = 1.0


def _sort_key(d: Scored):
    image = d.image if isinstance(d.image, tuple) else (d.image,)
    z = image[-1]
    return (-d.score, z, d.box[0], image, d.box[1:])


def average_precision(detections, ground_truths, iou_threshold: float = 0.5) -> float:
    """All-point interpolated AP of a single class.

    Detections are visited in order of decreasing score (ties: lower slice
    index, then lower ``x0``).  Each is matched to the unmatched ground
    truth in the same image with the highest IoU, if that IoU reaches the
    threshold.
    """
    dets = sorted(detections, key=_sort_key)
    gts_by_image: dict = {}
    for g in ground_truths:
        gts_by_image.setdefault(g.image, []).append(g.box)
    n_gt = sum(len(v) for v in gts_by_image.values())
    if n_gt == 0 or not dets:
        return 0.0
    matched = {k: [False] * len(v) for k, v in gts_by_image.items()}
    tp = np.zeros(len(dets))
    for i, d in enumerate(dets):
        boxes = gts_by_image.get(d.image, [])
        best, best_j = -1.0, -1
        for j, g in enumerate(boxes):
            if matched[d.image][j]:
                continue
            o = iou(d.box, g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= iou_threshold:
            matched[d.image][best_j] = True
            tp[i] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(dets) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def mean_average_precision(detections, ground_truths, iou_threshold: float = 0.5, label=lambda d: 0) -> float:
    """AP averaged over classes given by ``label`` (one class by default)."""
    dets, gts = list(detections), list(ground_truths)
    classes = sorted({label(g) for g in gts} | {label(d) for d in dets})
    if not classes:
        return 0.0
    aps = [
        average_precision([d for d in dets if label(d) == c], [g for g in gts if label(g) == c], iou_threshold)
        for c in classes
    ]
    return float(np.mean(aps))


# ----------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple
    val: tuple
    test: tuple
    fractions: tuple = SPLIT_FRACTIONS
    seed: int = 0

    def sizes(self) -> tuple:
        return (len(self.train), len(self.val), len(self.test))

    def to_dict(self) -> dict:
        return {
            "fractions": list(self.fractions),
            "seed": self.seed,
            "test": list(self.test),
            "train": list(self.train),
            "val": list(self.val),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), tuple(d["fractions"]), int(d["seed"]))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(manifest, fractions=SPLIT_FRACTIONS, seed: int = 0) -> SplitAssignment:
    """Deterministic stratified split of manifest entries into train/val/test.

    Entries are shuffled within each knot count, interleaved round-robin
    across knot counts, then cut at the rounded fraction sizes, so every
    subset keeps the per-k balance within rounding.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    entries = list(manifest)
    groups: dict = {}
    for e in entries:
        groups.setdefault(getattr(e, "k", 0), []).append(e.id if hasattr(e, "id") else e)
    rng = np.random.default_rng(seed)
    shuffled = []
    for k in sorted(groups):
        ids = sorted(groups[k])
        shuffled.append([ids[i] for i in rng.permutation(len(ids))])
    order = []
    depth = max((len(g) for g in shuffled), default=0)
    for i in range(depth):
        for g in shuffled:
            if i < len(g):
                order.append(g[i])
    n = len(order)
    n_train = _round_half_up(fractions[0] * n)
    n_val = _round_half_up(fractions[1] * n)
    n_val = min(n_val, n - n_train)
    return SplitAssignment(
        tuple(order[:n_train]),
        tuple(order[n_train : n_train + n_val]),
        tuple(order[n_train + n_val :]),
        fractions,
        int(seed),
    )
