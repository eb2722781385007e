"""Build the roundabout, inspect paths, and render a vehicle's view.

Walks through the world model: the three-leg map, lane-centerline paths
between entries and exits, and the three binary layers an agent actually
sees. Writes the layers as PGM images next to this script.
"""

from pathlib import Path

import numpy as np

from roundabout_marl import (
    GeometryConfig,
    arc_point,
    build_roundabout,
    path_for,
    rasterize_view,
    write_pgm,
)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

rmap = build_roundabout(GeometryConfig())
print(f"ring radius {rmap.ring_radius} m, lane width {rmap.lane_width} m, "
      f"driving circle at {rmap.drive_radius} m")
print(f"legs at {[round(np.degrees(a)) for a in rmap.leg_angles]} degrees, "
      f"{rmap.leg_length} m long\n")

print("path lengths (entry -> exit):")
for e in range(3):
    row = []
    for x in range(3):
        row.append(f"{e}->{x}: {path_for(rmap, e, x).total_length:6.1f} m")
    print("  " + "   ".join(row))
print("(same entry and exit means looping the whole ring first)\n")

# Put one vehicle halfway along a path and a second one ahead of it.
path = path_for(rmap, 0, 1)
s_ego = 35.0
poses = np.array([arc_point(path, s_ego), arc_point(path, min(s_ego + 12.0, path.total_length))])
view = rasterize_view(rmap, poses, 0, path, s_ego)

for name in ("navigable", "obstacles", "path"):
    grid = getattr(view, name)
    target = out_dir / f"view_{name}.pgm"
    write_pgm(grid, target)
    print(f"{name:10s}: {int(grid.sum()):5d} of {grid.size} cells set -> {target}")

print(f"\nview window: 50 m x 50 m at {view.meters_per_pixel:.4f} m/px, ego-centered, heading up")
print("the obstacles layer shows both rectangles; the path layer is the remaining route")
