"""Sweep mechanics, report round-trips, and SVG output."""

import xml.etree.ElementTree as ET

import pytest

from roundabout_marl.env import Action, EnvConfig
from roundabout_marl.evaluation import (
    SweepRow,
    SweepSpec,
    rows_from_csv,
    rows_to_csv,
    run_sweep,
    summarize,
    svg_line_chart,
    sweep_svg,
)
from roundabout_marl.net import NetConfig, PolicyValueNet, init_params

EVAL_NET_CFG = NetConfig(visual=False, numeric_dim=4, numeric_hidden=(4, 4), merge_features=4)


def crafted_accelerator() -> PolicyValueNet:
    """Hand-built policy: accelerate hard while below target speed."""
    net = init_params(EVAL_NET_CFG, 0)
    for k in net.params:
        net.params[k][:] = 0.0
    p = net.params
    p["num1_w"][0] = [-1.0, 1.0, 0.0, 0.0]  # target minus current speed
    p["num1_b"][1] = 1.0  # constant feature
    p["num2_w"][0, 0] = 1.0
    p["num2_w"][1, 1] = 1.0
    p["merge_w"][0, 0] = 1.0
    p["merge_w"][1, 1] = 1.0
    p["pi_w"][Action.ACCELERATE, 0] = 40.0
    p["pi_w"][Action.BRAKE, 1] = -3.0
    return net


def small_spec(**kw):
    kw.setdefault("parameter", "aggressiveness")
    kw.setdefault("values", (0.5,))
    kw.setdefault("episodes_per_value", 6)
    kw.setdefault("action_repeat_eval", 1)
    kw.setdefault("seed", 11)
    return SweepSpec(**kw)


def test_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(parameter="bogus", values=(1.0,))
    with pytest.raises(ValueError):
        SweepSpec(parameter="aggressiveness", values=(1.0,), episodes_per_value=0)
    with pytest.raises(ValueError):
        SweepSpec(parameter="aggressiveness", values=(1.0,), action_repeat_eval=3)
    with pytest.raises(ValueError):
        run_sweep(SweepSpec(parameter="aggressiveness", values=()), net=crafted_accelerator())


def test_crafted_policy_beats_random():
    spec = small_spec()
    good = run_sweep(spec, net=crafted_accelerator())[0]
    bad = run_sweep(spec, net=init_params(EVAL_NET_CFG, 123))[0]
    assert good.success_ratio > bad.success_ratio
    assert good.avg_speed > bad.avg_speed


def test_row_invariants():
    row = run_sweep(small_spec(), net=crafted_accelerator())[0]
    assert row.episodes == 6
    assert (row.episodes - row.crashes - row.timeouts) / row.episodes == row.success_ratio
    assert 0.0 <= row.success_ratio <= 1.0
    assert 0.0 <= row.avg_speed <= EnvConfig().v_max


def test_sweep_reproducible():
    spec = small_spec(values=(0.0, 1.0), episodes_per_value=3)
    a = run_sweep(spec, net=crafted_accelerator())
    b = run_sweep(spec, net=crafted_accelerator())
    assert a == b


def test_target_speed_sweep_runs():
    spec = small_spec(parameter="target_speed", values=(5.0,), episodes_per_value=3)
    row = run_sweep(spec, net=crafted_accelerator())[0]
    assert row.episodes == 3


def test_csv_roundtrip():
    rows = [
        SweepRow(0.0, 0.5, 3.25, 8, 2, 2),
        SweepRow(0.5, 0.75, 4.125, 8, 1, 1),
    ]
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "value,success_ratio,avg_speed,episodes,crashes,timeouts"
    assert rows_from_csv(text) == rows


def test_single_row_svg_is_valid_xml(tmp_path):
    rows = [SweepRow(0.5, 1.0, 5.0, 4, 0, 0)]
    csv_text, svg_text = summarize(rows, tmp_path / "s.csv", tmp_path / "s.svg",
                                   parameter="aggressiveness")
    root = ET.fromstring(svg_text)
    assert root.tag.endswith("svg")
    assert (tmp_path / "s.csv").read_text() == csv_text


def test_summarize_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        summarize([], tmp_path / "s.csv", tmp_path / "s.svg")


def test_monotone_series_gives_monotone_polyline():
    rows = [SweepRow(v, v / 4.0, 2.0 + v, 5, 0, 0) for v in (0.0, 1.0, 2.0, 3.0, 4.0)]
    svg = sweep_svg(rows, "aggressiveness")
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    polylines = root.findall(f"{ns}polyline")
    assert len(polylines) == 2
    for pl in polylines:
        pts = [tuple(map(float, p.split(","))) for p in pl.attrib["points"].split()]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        assert xs == sorted(xs)
        assert ys == sorted(ys, reverse=True)  # SVG y grows downward


def test_line_chart_rejects_empty():
    with pytest.raises(ValueError):
        svg_line_chart([], [])
