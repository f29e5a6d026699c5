"""A synthetic log from parameters to pixels.

We draw one random log with three knots, look at its parameters, then render
the three views every other stage builds on: an unrolled bark patch, the
half-plane density behind it, and a horizontal cross-section.

    python3 demos/01_forge_and_render.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from barkknots import io, raster
from barkknots.synthesis import forge_dataset, knot_exit_points, sample_log_spec

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

# A log is fully described by its spec; the seed pins every random choice.
spec = sample_log_spec(2024, 3)
print(f"log height {spec.height:.2f}, base radius {spec.taper.base_radius:.3f}")
for kn, (r_exit, z_exit) in zip(spec.knots, knot_exit_points(spec)):
    print(f"  knot at azimuth {np.degrees(kn.azimuth):6.1f} deg exits the bark at z={z_exit:.3f}, r={r_exit:.3f}")

# The bark patch is what a surface scanner would see: radius over (height, azimuth).
theta = spec.knots[0].azimuth
patch = raster.render_surface_patch(spec, theta)
print(f"patch {patch.grid.shape}, {patch.px_per_degree:.3f} px/deg, radius {patch.grid.min():.3f}..{patch.grid.max():.3f}")

# Behind the patch lies a half-plane of density: height down, radius across.
plane = raster.render_half_plane(spec, theta)
knot_px = int(np.sum(plane.grid > 0.6))
print(f"half-plane {plane.grid.shape}, {knot_px} knot pixels, mean density {plane.grid.mean():.3f}")

# A cross-section cuts through every knot at one height.
z = float(np.mean([z for _, z in knot_exit_points(spec)])) * 0.8
xs = raster.render_cross_section(spec, z, size=256)
print(f"cross-section at z={z:.2f}: {np.count_nonzero(xs.image)} wood pixels of {xs.image.size}")

# Datasets are manifests of specs, cheap to forge at full size.
man = forge_dataset(300, (2, 7), master_seed=0)
print(f"forged {len(man)} logs; first id {man.entries[0].id}")

out.mkdir(parents=True, exist_ok=True)
io.write_array(patch.grid.T, out / "patch.wlog")
io.write_array(plane.grid.T, out / "half_plane.wlog")
io.write_array(xs.image.T, out / "cross_section.wlog")
print(f"wrote patch, half-plane and cross-section to {out}/")
