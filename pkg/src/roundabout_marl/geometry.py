"""Roundabout geometry: map construction, lane-centerline paths, and
ego-centered rasterized views.

The map is a single-lane ring with three legs. Each leg carries one entry
lane and one exit lane; circulation on the ring is counterclockwise.
Everything here is pure data plus pure functions, safe to share across
worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRID_SIZE = 84
WINDOW_METERS = 50.0
METERS_PER_PIXEL = WINDOW_METERS / GRID_SIZE

VEHICLE_LENGTH = 4.0
VEHICLE_WIDTH = 1.8

N_LEGS = 3


@dataclass(frozen=True)
class GeometryConfig:
    """Dimensions of the roundabout. Lengths in meters, angles in degrees."""

    ring_radius: float = 14.0
    lane_width: float = 4.0
    leg_length: float = 25.0
    leg_angles_deg: tuple[float, float, float] = (90.0, 210.0, 330.0)
    sample_step: float = 0.5


@dataclass(frozen=True)
class RoundaboutMap:
    """Static map: ring annulus plus three 2-lane leg rectangles.

    The drivable ring occupies radii [ring_radius - lane_width, ring_radius];
    vehicles follow its centerline at radius ``drive_radius``. Legs extend
    radially from the ring edge outward by ``leg_length`` and are two lanes
    wide (entry lane offset counterclockwise of the leg axis, exit lane
    clockwise, for right-hand traffic).
    """

    center: tuple[float, float]
    ring_radius: float
    lane_width: float
    leg_length: float
    leg_angles: tuple[float, float, float]  # radians
    sample_step: float

    @property
    def inner_radius(self) -> float:
        return self.ring_radius - self.lane_width

    @property
    def drive_radius(self) -> float:
        return self.ring_radius - 0.5 * self.lane_width

    @property
    def leg_inner_tau(self) -> float:
        # Legs reach inward far enough that the annulus takes over coverage.
        return math.sqrt(self.ring_radius**2 - self.lane_width**2)

    @property
    def leg_outer_tau(self) -> float:
        return self.ring_radius + self.leg_length

    @property
    def merge_half_angle(self) -> float:
        # Angular offset between a leg axis and its entry/exit junction
        # on the driving centerline.
        return math.asin(0.5 * self.lane_width / self.drive_radius)

    def leg_frame(self, leg: int) -> tuple[np.ndarray, np.ndarray]:
        """Unit vectors (radial out, ccw tangent) of a leg axis."""
        phi = self.leg_angles[leg]
        u = np.array([math.cos(phi), math.sin(phi)])
        t = np.array([-math.sin(phi), math.cos(phi)])
        return u, t

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized point-in-navigable test for an (N, 2) array."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = points - np.asarray(self.center)
        r = np.hypot(rel[:, 0], rel[:, 1])
        mask = (r >= self.inner_radius) & (r <= self.ring_radius)
        for leg in range(N_LEGS):
            u, t = self.leg_frame(leg)
            tau = rel @ u
            off = rel @ t
            mask |= (
                (tau >= self.leg_inner_tau)
                & (tau <= self.leg_outer_tau)
                & (np.abs(off) <= self.lane_width)
            )
        return mask

    def contains_point(self, x: float, y: float) -> bool:
        return bool(self.contains(np.array([[x, y]]))[0])

    def navigable_outlines(self) -> list[np.ndarray]:
        """Closed polygons approximating the navigable region (for demos)."""
        ang = np.linspace(0.0, 2 * math.pi, 181)
        cx, cy = self.center
        outlines = [
            np.column_stack([cx + self.ring_radius * np.cos(ang), cy + self.ring_radius * np.sin(ang)]),
            np.column_stack([cx + self.inner_radius * np.cos(ang), cy + self.inner_radius * np.sin(ang)]),
        ]
        for leg in range(N_LEGS):
            u, t = self.leg_frame(leg)
            c = np.asarray(self.center)
            a, b = self.leg_inner_tau, self.leg_outer_tau
            w = self.lane_width
            corners = np.array([c + a * u + w * t, c + b * u + w * t, c + b * u - w * t, c + a * u - w * t, c + a * u + w * t])
            outlines.append(corners)
        return outlines


@dataclass(frozen=True)
class _Segment:
    """Straight path primitive with exact arc-length range [s0, s1]."""

    a: tuple[float, float]
    b: tuple[float, float]
    s0: float
    s1: float


@dataclass(frozen=True)
class _Arc:
    """Counterclockwise circular path primitive, sweep > 0."""

    center: tuple[float, float]
    radius: float
    ang0: float
    sweep: float
    s0: float
    s1: float


@dataclass(frozen=True)
class PathSpec:
    """Arc-length-parameterized polyline from an entry to an exit.

    ``cum_length`` holds the exact arc length at each vertex (arc vertices
    use the true circular length, not the chord sum), so ``total_length``
    matches the closed-form entry + arc + exit decomposition. The raw
    primitives are kept for fast exact stroking of the remaining path.
    """

    entry_id: int
    exit_id: int
    points: np.ndarray  # (N, 2)
    cum_length: np.ndarray  # (N,)
    total_length: float
    entry_length: float
    ring_length: float
    exit_length: float
    primitives: tuple


def build_roundabout(cfg: GeometryConfig) -> RoundaboutMap:
    """Validate a geometry config and produce the immutable map."""
    if not (cfg.ring_radius > cfg.lane_width > 0):
        raise ValueError("require ring_radius > lane_width > 0")
    if cfg.leg_length <= 0:
        raise ValueError("leg_length must be positive")
    if len(cfg.leg_angles_deg) != N_LEGS:
        raise ValueError(f"exactly {N_LEGS} legs required")
    if cfg.sample_step <= 0:
        raise ValueError("sample_step must be positive")
    return RoundaboutMap(
        center=(0.0, 0.0),
        ring_radius=float(cfg.ring_radius),
        lane_width=float(cfg.lane_width),
        leg_length=float(cfg.leg_length),
        leg_angles=tuple(math.radians(a) for a in cfg.leg_angles_deg),
        sample_step=float(cfg.sample_step),
    )


def path_for(rmap: RoundaboutMap, entry_id: int, exit_id: int, sample_step: float | None = None) -> PathSpec:
    """Lane-centerline path: entry leg, ccw ring arc, exit leg.

    ``entry_id == exit_id`` loops nearly the whole ring before exiting.
    """
    if entry_id not in range(N_LEGS) or exit_id not in range(N_LEGS):
        raise ValueError("entry_id and exit_id must be in {0, 1, 2}")
    step = rmap.sample_step if sample_step is None else float(sample_step)
    if step <= 0:
        raise ValueError("sample_step must be positive")

    c = np.asarray(rmap.center)
    r_c = rmap.drive_radius
    half = 0.5 * rmap.lane_width
    delta = rmap.merge_half_angle
    tau_merge = math.sqrt(r_c**2 - half**2)
    tau_out = rmap.leg_outer_tau

    u_e, t_e = rmap.leg_frame(entry_id)
    u_x, t_x = rmap.leg_frame(exit_id)
    phi_e = rmap.leg_angles[entry_id]
    phi_x = rmap.leg_angles[exit_id]

    entry_far = c + tau_out * u_e + half * t_e
    merge_pt = c + tau_merge * u_e + half * t_e  # on the drive circle, angle phi_e + delta
    diverge_pt = c + tau_merge * u_x - half * t_x  # angle phi_x - delta
    exit_far = c + tau_out * u_x - half * t_x

    entry_len = tau_out - tau_merge
    exit_len = entry_len
    ang_start = phi_e + delta
    sweep = (phi_x - delta - ang_start) % (2 * math.pi)
    ring_len = r_c * sweep
    total = entry_len + ring_len + exit_len

    prims = (
        _Segment(tuple(entry_far), tuple(merge_pt), 0.0, entry_len),
        _Arc(tuple(c), r_c, ang_start, sweep, entry_len, entry_len + ring_len),
        _Segment(tuple(diverge_pt), tuple(exit_far), entry_len + ring_len, total),
    )

    pts: list[np.ndarray] = []
    svals: list[float] = []

    n_entry = max(1, math.ceil(entry_len / step))
    for i in range(n_entry + 1):
        f = i / n_entry
        pts.append(entry_far + f * (merge_pt - entry_far))
        svals.append(f * entry_len)

    n_arc = max(1, math.ceil(ring_len / step))
    for i in range(1, n_arc):
        ang = ang_start + sweep * i / n_arc
        pts.append(c + r_c * np.array([math.cos(ang), math.sin(ang)]))
        svals.append(entry_len + ring_len * i / n_arc)
    pts.append(diverge_pt)
    svals.append(entry_len + ring_len)

    n_exit = max(1, math.ceil(exit_len / step))
    for i in range(1, n_exit + 1):
        f = i / n_exit
        pts.append(diverge_pt + f * (exit_far - diverge_pt))
        svals.append(entry_len + ring_len + f * exit_len)

    points = np.array(pts)
    cum = np.array(svals)
    cum[-1] = total  # guard against rounding in the last fraction
    return PathSpec(
        entry_id=entry_id,
        exit_id=exit_id,
        points=points,
        cum_length=cum,
        total_length=total,
        entry_length=entry_len,
        ring_length=ring_len,
        exit_length=exit_len,
        primitives=prims,
    )


def arc_point(path: PathSpec, s: float) -> tuple[float, float, float]:
    """Pose (x, y, heading) at arc position s.

    Linear interpolation between polyline vertices; at a vertex the heading
    of the outgoing segment is used. s == cum_length[i] returns points[i]
    bit-exactly.
    """
    if s < 0.0 or s > path.total_length:
        raise ValueError(f"s={s} outside [0, {path.total_length}]")
    pts, cum = path.points, path.cum_length
    if s == path.total_length:
        p0, p1 = pts[-2], pts[-1]
        return float(p1[0]), float(p1[1]), math.atan2(p1[1] - p0[1], p1[0] - p0[0])
    idx = int(np.searchsorted(cum, s, side="right")) - 1
    idx = max(0, min(idx, len(pts) - 2))
    p0, p1 = pts[idx], pts[idx + 1]
    t = (s - cum[idx]) / (cum[idx + 1] - cum[idx])
    x = p0[0] + t * (p1[0] - p0[0])
    y = p0[1] + t * (p1[1] - p0[1])
    return float(x), float(y), math.atan2(p1[1] - p0[1], p1[0] - p0[0])


def path_xy(path: PathSpec, s_values: np.ndarray) -> np.ndarray:
    """Vectorized positions along the polyline for many arc positions."""
    s_values = np.asarray(s_values, dtype=float)
    xs = np.interp(s_values, path.cum_length, path.points[:, 0])
    ys = np.interp(s_values, path.cum_length, path.points[:, 1])
    return np.column_stack([xs, ys])


# ---------------------------------------------------------------------------
# Oriented rectangles (vehicle footprints)

def rect_corners(x: float, y: float, heading: float,
                 length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH) -> np.ndarray:
    ch, sh = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[ch, -sh], [sh, ch]])
    return local @ rot.T + np.array([x, y])


def rects_overlap(pose_a, pose_b, length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH) -> bool:
    """Strict separating-axis overlap test; touching at zero area is False."""
    ca = rect_corners(pose_a[0], pose_a[1], pose_a[2], length, width)
    cb = rect_corners(pose_b[0], pose_b[1], pose_b[2], length, width)
    for heading in (pose_a[2], pose_b[2]):
        ch, sh = math.cos(heading), math.sin(heading)
        for axis in ((ch, sh), (-sh, ch)):
            pa = ca @ axis
            pb = cb @ axis
            if min(pa.max(), pb.max()) - max(pa.min(), pb.min()) <= 0.0:
                return False
    return True


def points_to_rect_distance(points: np.ndarray, pose,
                            length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH) -> np.ndarray:
    """Euclidean distance from (N, 2) points to an oriented rectangle (0 inside)."""
    x, y, heading = pose[0], pose[1], pose[2]
    ch, sh = math.cos(heading), math.sin(heading)
    rel = np.atleast_2d(points) - np.array([x, y])
    xl = rel[:, 0] * ch + rel[:, 1] * sh
    yl = -rel[:, 0] * sh + rel[:, 1] * ch
    dx = np.maximum(np.abs(xl) - 0.5 * length, 0.0)
    dy = np.maximum(np.abs(yl) - 0.5 * width, 0.0)
    return np.hypot(dx, dy)


# ---------------------------------------------------------------------------
# Rasterization

@dataclass(frozen=True)
class ViewLayers:
    """One ego-centered 50 m x 50 m view as three binary 84 x 84 grids."""

    navigable: np.ndarray
    obstacles: np.ndarray
    path: np.ndarray
    meters_per_pixel: float = METERS_PER_PIXEL


def _base_cells() -> np.ndarray:
    # Cell centers in the window frame: ego at the origin, heading up,
    # row 0 at the top (farthest ahead).
    idx = (np.arange(GRID_SIZE) + 0.5) * METERS_PER_PIXEL
    xw = idx - 0.5 * WINDOW_METERS
    yw = 0.5 * WINDOW_METERS - idx
    gx, gy = np.meshgrid(xw, yw)
    return np.column_stack([gx.ravel(), gy.ravel()])


_BASE_CELLS = _base_cells()
_VIEW_REACH = 0.5 * WINDOW_METERS * math.sqrt(2.0)


def _ccw_sector_mask(rel: np.ndarray, ang_start: float, sweep: float) -> np.ndarray:
    """Membership in the ccw angular sector [ang_start, ang_start + sweep].

    Half-plane cross products instead of arctan2: for sweep <= pi a point is
    inside iff it is ccw of the start ray and cw of the end ray; wider
    sweeps test the complementary sector.
    """
    if sweep >= 2 * math.pi:
        return np.ones(len(rel), dtype=bool)
    sx, sy = math.cos(ang_start), math.sin(ang_start)
    ex_, ey_ = math.cos(ang_start + sweep), math.sin(ang_start + sweep)
    cross_s = sx * rel[:, 1] - sy * rel[:, 0]   # >= 0: ccw of the start ray
    cross_e = ex_ * rel[:, 1] - ey_ * rel[:, 0]  # <= 0: cw of the end ray
    if sweep <= math.pi:
        return (cross_s >= 0.0) & (cross_e <= 0.0)
    return ~((cross_s < 0.0) & (cross_e > 0.0))


def rasterize_view(rmap: RoundaboutMap, poses: np.ndarray, ego_index: int,
                   ego_path: PathSpec, ego_s: float) -> ViewLayers:
    """Render the three semantic layers around one vehicle.

    poses is an (N, 3) array of (x, y, heading) for every vehicle on the
    map, ego included. The window is centered on the ego and rotated so the
    ego heading points to image-up. A cell is set iff its center lies inside
    the corresponding shape. The path layer strokes only the remaining part
    of the ego path (from ego_s forward) at lane width.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    if not (0 <= ego_index < len(poses)):
        raise ValueError("ego_index out of range")
    ex, ey, eh = poses[ego_index]
    a = eh - 0.5 * math.pi
    ca, sa = math.cos(a), math.sin(a)
    rot = np.array([[ca, -sa], [sa, ca]])
    world = _BASE_CELLS @ rot.T + np.array([ex, ey])

    rel = world - np.asarray(rmap.center)
    # All radial tests compare squared distances against squared bounds; the
    # shared r2 array keeps the annulus and the ring-band tests consistent.
    r2 = rel[:, 0] ** 2 + rel[:, 1] ** 2

    navigable = (r2 >= rmap.inner_radius**2) & (r2 <= rmap.ring_radius**2)
    for leg in range(N_LEGS):
        u, t = rmap.leg_frame(leg)
        tau = rel @ u
        off = rel @ t
        navigable |= (tau >= rmap.leg_inner_tau) & (tau <= rmap.leg_outer_tau) & (np.abs(off) <= rmap.lane_width)

    obstacles = np.zeros(len(world), dtype=bool)
    for i, (vx, vy, vh) in enumerate(poses):
        if i != ego_index and math.hypot(vx - ex, vy - ey) > _VIEW_REACH + 0.5 * VEHICLE_LENGTH + 1.0:
            continue
        ch, sh = math.cos(vh), math.sin(vh)
        d0 = world[:, 0] - vx
        d1 = world[:, 1] - vy
        xl = d0 * ch + d1 * sh
        yl = d1 * ch - d0 * sh
        obstacles |= (np.abs(xl) <= 0.5 * VEHICLE_LENGTH) & (np.abs(yl) <= 0.5 * VEHICLE_WIDTH)

    stroke = 0.5 * rmap.lane_width
    path_mask = np.zeros(len(world), dtype=bool)
    for prim in ego_path.primitives:
        if prim.s1 <= ego_s:
            continue
        if isinstance(prim, _Segment):
            a_pt = np.asarray(prim.a)
            b_pt = np.asarray(prim.b)
            if ego_s > prim.s0:
                f = (ego_s - prim.s0) / (prim.s1 - prim.s0)
                a_pt = a_pt + f * (b_pt - a_pt)
            ab = b_pt - a_pt
            denom = float(ab @ ab)
            if denom > 0.0:
                # Flat caps: the band ends at the segment's perpendiculars, so
                # the stroke never pokes past the outer leg ends. Junctions
                # with the ring are sealed by the arc's round caps.
                w0 = world[:, 0] - a_pt[0]
                w1 = world[:, 1] - a_pt[1]
                tt = (w0 * ab[0] + w1 * ab[1]) / denom
                dist2 = (w0 - tt * ab[0]) ** 2 + (w1 - tt * ab[1]) ** 2
                path_mask |= (tt >= 0.0) & (tt <= 1.0) & (dist2 <= stroke**2)
        else:
            start = max(ego_s, prim.s0)
            ang_s = prim.ang0 + (start - prim.s0) / prim.radius
            sweep = (prim.s1 - start) / prim.radius
            in_sector = _ccw_sector_mask(rel, ang_s, sweep)
            lo, hi = prim.radius - stroke, prim.radius + stroke
            path_mask |= in_sector & (r2 >= lo * lo) & (r2 <= hi * hi)
            # Round caps at both angular ends keep the stroke continuous.
            for ang in (ang_s, ang_s + sweep):
                end = np.asarray(prim.center) + prim.radius * np.array([math.cos(ang), math.sin(ang)])
                if math.hypot(end[0] - ex, end[1] - ey) <= _VIEW_REACH + stroke:
                    cap2 = (world[:, 0] - end[0]) ** 2 + (world[:, 1] - end[1]) ** 2
                    path_mask |= cap2 <= stroke**2

    shape = (GRID_SIZE, GRID_SIZE)
    return ViewLayers(
        navigable=navigable.reshape(shape).astype(np.uint8),
        obstacles=obstacles.reshape(shape).astype(np.uint8),
        path=path_mask.reshape(shape).astype(np.uint8),
    )


def write_pgm(grid: np.ndarray, path) -> None:
    """Binary PGM (P5), maxval 255; cells become 0 or 255."""
    grid = np.asarray(grid)
    if grid.shape != (GRID_SIZE, GRID_SIZE):
        raise ValueError("expected an 84x84 grid")
    header = f"P5\n{GRID_SIZE} {GRID_SIZE}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write((grid.astype(np.uint8) * 255).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read back a binary grid written by ``write_pgm``."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in dims.split())
    if int(maxval) != 255:
        raise ValueError("expected maxval 255")
    img = np.frombuffer(rest[: w * h], dtype=np.uint8).reshape(h, w)
    return (img > 0).astype(np.uint8)
