"""Map construction, path arc-length bookkeeping, and rasterizer behavior."""

import math

import numpy as np
import pytest

from roundabout_marl.geometry import (
    GRID_SIZE,
    METERS_PER_PIXEL,
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    GeometryConfig,
    arc_point,
    build_roundabout,
    path_for,
    path_xy,
    rasterize_view,
    read_pgm,
    write_pgm,
)


@pytest.fixture(scope="module")
def rmap():
    return build_roundabout(GeometryConfig())


def closed_form_length(rmap, entry_id, exit_id):
    """Independent arc-length oracle: straight entry + ccw arc + straight exit."""
    r_c = rmap.drive_radius
    half = 0.5 * rmap.lane_width
    delta = math.asin(half / r_c)
    leg_seg = (rmap.ring_radius + rmap.leg_length) - math.sqrt(r_c**2 - half**2)
    phi_e = rmap.leg_angles[entry_id]
    phi_x = rmap.leg_angles[exit_id]
    sweep = (phi_x - delta - (phi_e + delta)) % (2 * math.pi)
    return 2 * leg_seg + r_c * sweep


def test_build_defaults(rmap):
    assert len(rmap.leg_angles) == 3
    assert rmap.inner_radius == 10.0
    assert rmap.drive_radius == 12.0
    # navigable area is nonempty: a point on the driving circle is inside
    assert rmap.contains_point(rmap.drive_radius, 0.0)


def test_build_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        build_roundabout(GeometryConfig(lane_width=0.0))
    with pytest.raises(ValueError):
        build_roundabout(GeometryConfig(ring_radius=3.0, lane_width=4.0))
    with pytest.raises(ValueError):
        build_roundabout(GeometryConfig(leg_length=0.0))
    with pytest.raises(ValueError):
        build_roundabout(GeometryConfig(leg_angles_deg=(0.0, 90.0)))


def test_center_is_not_navigable(rmap):
    assert not rmap.contains_point(0.0, 0.0)
    # far off road
    assert not rmap.contains_point(200.0, 200.0)


def test_navigable_outlines_are_closed_polygons(rmap):
    outlines = rmap.navigable_outlines()
    assert len(outlines) == 5  # outer ring, island, three legs
    for poly in outlines:
        assert np.allclose(poly[0], poly[-1])


def test_adjacent_exit_length_matches_closed_form(rmap):
    path = path_for(rmap, 0, 1)
    assert abs(path.total_length - closed_form_length(rmap, 0, 1)) < 1e-9
    # also close to the coarse leg + third-of-ring estimate
    coarse = rmap.leg_length + 2 * math.pi * rmap.drive_radius / 3 + rmap.leg_length
    assert abs(path.total_length - coarse) < 5.0


def test_all_pairs_match_closed_form(rmap):
    for e in range(3):
        for x in range(3):
            path = path_for(rmap, e, x)
            assert abs(path.total_length - closed_form_length(rmap, e, x)) < 1e-9
            assert path.entry_length + path.ring_length + path.exit_length == pytest.approx(
                path.total_length, abs=1e-12
            )


def test_same_entry_exit_loops_the_ring(rmap):
    path = path_for(rmap, 0, 0)
    assert path.total_length > 2 * math.pi * rmap.drive_radius


def test_every_sampled_point_is_navigable(rmap):
    for e in range(3):
        for x in range(3):
            path = path_for(rmap, e, x)
            assert rmap.contains(path.points).all(), f"path {e}->{x} leaves the road"


def test_cum_length_monotone(rmap):
    path = path_for(rmap, 1, 2)
    d = np.diff(path.cum_length)
    assert (d > 0).all()
    assert path.cum_length[0] == 0.0
    assert path.cum_length[-1] == path.total_length


def test_path_for_rejects_bad_args(rmap):
    with pytest.raises(ValueError):
        path_for(rmap, 0, 3)
    with pytest.raises(ValueError):
        path_for(rmap, 0, 1, sample_step=0.0)


def test_arc_point_endpoints_and_vertices(rmap):
    path = path_for(rmap, 2, 0)
    x0, y0, _ = arc_point(path, 0.0)
    assert (x0, y0) == (path.points[0, 0], path.points[0, 1])
    x1, y1, _ = arc_point(path, path.total_length)
    assert (x1, y1) == (path.points[-1, 0], path.points[-1, 1])
    # exact vertex recovery at every cum_length entry
    for i in range(len(path.points)):
        x, y, _ = arc_point(path, float(path.cum_length[i]))
        assert x == path.points[i, 0] and y == path.points[i, 1]


def test_arc_point_vertex_heading_uses_outgoing_segment(rmap):
    path = path_for(rmap, 0, 1)
    i = len(path.points) // 2
    _, _, h = arc_point(path, float(path.cum_length[i]))
    seg = path.points[i + 1] - path.points[i]
    assert h == pytest.approx(math.atan2(seg[1], seg[0]), abs=1e-12)


def test_arc_point_out_of_range(rmap):
    path = path_for(rmap, 0, 1)
    with pytest.raises(ValueError):
        arc_point(path, -0.1)
    with pytest.raises(ValueError):
        arc_point(path, path.total_length + 0.1)


def test_path_xy_matches_arc_point(rmap):
    path = path_for(rmap, 0, 2)
    svals = np.linspace(0.0, path.total_length, 57)
    pts = path_xy(path, svals)
    for s, p in zip(svals, pts):
        x, y, _ = arc_point(path, float(s))
        assert math.hypot(x - p[0], y - p[1]) < 1e-9


# ---------------------------------------------------------------------------
# Rasterization


def _ego_view(rmap, s=30.0, entry=0, exit_=1):
    path = path_for(rmap, entry, exit_)
    pose = arc_point(path, s)
    poses = np.array([pose])
    return rasterize_view(rmap, poses, 0, path, s), path, pose


def test_lone_vehicle_pixel_count(rmap):
    view, _, _ = _ego_view(rmap)
    expected = (VEHICLE_LENGTH * VEHICLE_WIDTH) / METERS_PER_PIXEL**2
    count = int(view.obstacles.sum())
    assert abs(count - expected) <= 4
    # the footprint sits at the window center
    rows, cols = np.nonzero(view.obstacles)
    assert abs(rows.mean() - (GRID_SIZE - 1) / 2) < 3
    assert abs(cols.mean() - (GRID_SIZE - 1) / 2) < 3


def test_view_is_deterministic(rmap):
    v1, _, _ = _ego_view(rmap, s=17.3)
    v2, _, _ = _ego_view(rmap, s=17.3)
    assert np.array_equal(v1.navigable, v2.navigable)
    assert np.array_equal(v1.obstacles, v2.obstacles)
    assert np.array_equal(v1.path, v2.path)


def test_far_from_road_navigable_is_empty(rmap):
    # synthetic straight path far away from any navigable geometry
    from roundabout_marl.geometry import PathSpec, _Segment

    a, b = (200.0, 0.0), (240.0, 0.0)
    pts = np.column_stack([np.linspace(a[0], b[0], 81), np.zeros(81)])
    cum = np.linspace(0.0, 40.0, 81)
    far_path = PathSpec(0, 0, pts, cum, 40.0, 40.0, 0.0, 0.0, (_Segment(a, b, 0.0, 40.0),))
    pose = np.array([[220.0, 0.0, 0.0]])
    view = rasterize_view(rmap, pose, 0, far_path, 20.0)
    assert view.navigable.sum() == 0
    assert view.obstacles.sum() > 0  # the ego itself still renders


def test_path_layer_subset_of_navigable(rmap):
    rng = np.random.default_rng(7)
    for _ in range(25):
        e = int(rng.integers(3))
        x = int(rng.integers(3))
        path = path_for(rmap, e, x)
        s = float(rng.uniform(0.0, path.total_length))
        pose = arc_point(path, s)
        view = rasterize_view(rmap, np.array([pose]), 0, path, s)
        assert not np.any(view.path & ~view.navigable)


def test_rotational_consistency(rmap):
    rng = np.random.default_rng(3)
    base_cfg = GeometryConfig()
    for _ in range(10):
        alpha = float(rng.uniform(0.0, 2 * math.pi))
        e, x = int(rng.integers(3)), int(rng.integers(3))
        s = float(rng.uniform(1.0, 60.0))
        rot_cfg = GeometryConfig(
            leg_angles_deg=tuple(a + math.degrees(alpha) for a in base_cfg.leg_angles_deg)
        )
        rot_map = build_roundabout(rot_cfg)
        path = path_for(rmap, e, x)
        rpath = path_for(rot_map, e, x)
        s = min(s, path.total_length - 1.0)
        pose = arc_point(path, s)
        rpose = arc_point(rpath, s)
        # add one more vehicle ahead on the same path in both worlds
        s2 = min(s + 9.0, path.total_length)
        other = arc_point(path, s2)
        rother = arc_point(rpath, s2)
        v1 = rasterize_view(rmap, np.array([pose, other]), 0, path, s)
        v2 = rasterize_view(rot_map, np.array([rpose, rother]), 0, rpath, s)
        for name in ("navigable", "obstacles", "path"):
            g1, g2 = getattr(v1, name), getattr(v2, name)
            assert np.array_equal(g1, g2), f"{name} layer changed under world rotation"


def test_pgm_roundtrip(tmp_path, rmap):
    view, _, _ = _ego_view(rmap, s=12.0)
    out = tmp_path / "layer.pgm"
    write_pgm(view.path, out)
    raw = out.read_bytes()
    assert raw.startswith(b"P5\n84 84\n255\n")
    again = read_pgm(out)
    assert np.array_equal(again, view.path)
