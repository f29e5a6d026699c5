"""Finding knots in a stack of CT-like slices.

The slice pipeline recentres each slice on the pith, traces the bark along
rays, finds bright blobs inside the bark and links them into knot tracks.
Ground truth comes straight from the analytic knot geometry, so we can score
both the contour and the detections.

    python3 demos/02_knots_in_slices.py
"""

import math

import numpy as np

from barkknots import extract, raster
from barkknots.metrics import Scored, mean_average_precision
from barkknots.synthesis import sample_log_spec, surface_radius

size, nz = 256, 48
spec = sample_log_spec(77, 4)
stack = raster.render_stack(spec, size, nz)
annotations = raster.annotate_slices(spec, size, nz)
print(f"{nz} slices of {size}x{size}; {sum(len(a.ellipses) for a in annotations)} annotated knot sections")

result = extract.process_stack(stack)

# Bark contour against the analytic surface, in pixels.
angles = np.arange(360) * 2 * math.pi / 360
scale = size / (2 * raster.EXTENT)
heights = raster.slice_heights(nz, (0.0, spec.height))
truth = np.stack([surface_radius(spec, angles, z) * scale for z in heights])
print(f"bark contour mean error {np.mean(np.abs(result.contours - truth)):.3f} px")

# Tracks: each should follow one knot upward through the slices.
for i, t in enumerate(result.tracks):
    z = t.z_indices
    filled = sum(e.interpolated for e in t.entries)
    print(f"  track {i}: slices {z[0]}..{z[-1]}, {filled} bridged")

hit, total = extract.recovered_instances(result.tracks, annotations)
print(f"recovered {hit}/{total} knot sections within 2 px")

# The same detections scored as boxes.
dets = [Scored(e.z_index, e.detection.box, e.detection.score) for t in result.tracks for e in t.entries]
gts = [Scored(a.z_index, b) for a in annotations for b in a.boxes]
for thr in (0.5, 0.75):
    print(f"mAP@{int(thr * 100)} = {mean_average_precision(dets, gts, thr):.3f}")
