import json

import numpy as np
import pytest

from scnmine.errors import DanglingReference, DuplicateSample, MalformedRow, MissingColumn, SchemaError, TrackTooShort
from scnmine.ingest import (IngestConfig, Track, TrackSet, load_tracks, parse_tracks, resample_and_smooth, validate,
                            write_tracks)
from scnmine.roadmap import parse_road_map, write_road_map
from scnmine import synthgen

HEADER = "frame,id,x,y,xVelocity,yVelocity,laneId\n"


def _csv(tmp_path, body, header=HEADER, name="t.csv"):
    p = tmp_path / name
    p.write_text(header + body, encoding="utf-8")
    return p


def _track(vid, frames, x, y=None, vx=None, dt=0.04):
    n = len(frames)
    y = np.zeros(n) if y is None else np.asarray(y, float)
    vx = np.zeros(n) if vx is None else np.asarray(vx, float)
    return Track(vid, 4.5, 1.8, np.asarray(frames, np.int64), np.asarray(x, float), y, vx, np.zeros(n), np.zeros(n),
                 np.array([None] * n, dtype=object), dt)


def _lane_map(tmp_path, lanes, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps({"dt_hint": 0.04, "lanes": lanes, "conflict_zones": []}), encoding="utf-8")
    return p


# -- parse_tracks --------------------------------------------------------------

def test_row_maps_fields(tmp_path):
    ts = parse_tracks(_csv(tmp_path, "10,5,100.0,8.2,25.0,0.0,2\n"))
    (pt,) = ts["5"].points
    assert pt.frame_index == 10
    assert (pt.x, pt.y, pt.vx, pt.vy) == (100.0, 8.2, 25.0, 0.0)
    assert pt.lane_id == "2"
    assert pt.t == pytest.approx(10 * 0.04)


def test_empty_file_gives_empty_set(tmp_path):
    ts = parse_tracks(_csv(tmp_path, ""))
    assert len(ts) == 0


def test_non_numeric_value_names_line(tmp_path):
    with pytest.raises(MalformedRow) as exc:
        parse_tracks(_csv(tmp_path, "1,1,0.0,0,1,0,1\n2,1,abc,0,1,0,1\n"))
    assert "3" in str(exc.value)


def test_missing_column(tmp_path):
    with pytest.raises(MissingColumn):
        parse_tracks(_csv(tmp_path, "1,1,0,0,1\n", header="frame,id,x,y,xVelocity\n"))


def test_duplicate_sample(tmp_path):
    with pytest.raises(DuplicateSample):
        parse_tracks(_csv(tmp_path, "1,1,0,0,1,0,1\n1,1,1,0,1,0,1\n"))


def test_remapped_headers(tmp_path):
    cfg = IngestConfig(columns={"vx": "vx", "vy": "vy"})
    ts = parse_tracks(_csv(tmp_path, "0,a,1,2,3,4\n", header="frame,id,x,y,vx,vy\n"), cfg)
    assert ts["a"].vx[0] == 3.0 and ts["a"].vy[0] == 4.0


def test_points_sorted_by_frame(tmp_path):
    ts = parse_tracks(_csv(tmp_path, "3,1,3,0,1,0,1\n1,1,1,0,1,0,1\n2,1,2,0,1,0,1\n"))
    assert ts["1"].frames.tolist() == [1, 2, 3]
    assert ts["1"].x.tolist() == [1.0, 2.0, 3.0]


def test_round_trip_is_bit_identical(tmp_path):
    ts, _, _ = synthgen.generate(synthgen.follow_script(0, noise=0.3))
    write_tracks(ts, tmp_path / "a.csv")
    back = parse_tracks(tmp_path / "a.csv")
    assert back == ts
    write_tracks(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# -- road map --------------------------------------------------------------------

def test_parallel_lanes_resolve(tmp_path):
    p = _lane_map(tmp_path, [
        {"lane_id": "1", "centerline": [[0, 0], [100, 0]], "direction_sign": 1, "left": "2", "right": None,
         "successors": [], "type": "normal"},
        {"lane_id": "2", "centerline": [[0, 3.5], [100, 3.5]], "direction_sign": 1, "left": None, "right": "1",
         "successors": [], "type": "normal"},
    ])
    rm = parse_road_map(p)
    assert set(rm.neighbors("1")) == {"2"}
    assert set(rm.neighbors("2")) == {"1"}


def test_dangling_successor(tmp_path):
    p = _lane_map(tmp_path, [{"lane_id": "1", "centerline": [[0, 0], [10, 0]], "successors": ["L9"]}])
    with pytest.raises(DanglingReference) as exc:
        parse_road_map(p)
    assert "L9" in str(exc.value)


def test_node_sampling(tmp_path):
    p = _lane_map(tmp_path, [{"lane_id": "1", "centerline": [[0, 0], [100, 0]]}])
    rm = parse_road_map(p, node_interval=10.0)
    assert [n.arc_position for n in rm.road_nodes] == [10.0 * k for k in range(11)]


def test_schema_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"lanes": [{"lane_id": "1", "centerline": [[0, 0]]}]}), encoding="utf-8")
    with pytest.raises(SchemaError):
        parse_road_map(p)
    p.write_text(json.dumps({"lanes": [{"lane_id": "1", "centerline": [[0, 0], [1, 0]]}],
                             "conflict_zones": [{"zone_id": "z", "kind": "static_point",
                                                 "polygon": [[0, 0], [1, 1], [1, 0], [0, 1]]}]}), encoding="utf-8")
    with pytest.raises(SchemaError):
        parse_road_map(p)


def test_map_round_trip(tmp_path):
    _, rm, _ = synthgen.generate(synthgen.crossing_script(0))
    write_road_map(rm, tmp_path / "m.json")
    back = parse_road_map(tmp_path / "m.json")
    assert back.to_dict() == rm.to_dict()


# -- resampling ---------------------------------------------------------------------

def test_uniform_track_window_one_is_identity():
    tr = _track("1", range(10), np.arange(10.0), vx=np.full(10, 25.0))
    ts = TrackSet(0.04, {"1": tr})
    out = resample_and_smooth(ts, IngestConfig(dt=0.04, smoothing_window=1))
    assert out == ts


def test_linear_interpolation():
    tr = _track("1", [0, 2], [0.0, 10.0], vx=[10.0, 10.0], dt=0.5)
    ts = TrackSet(0.5, {"1": tr})
    out = resample_and_smooth(ts, IngestConfig(dt=0.5, source_dt=0.5, smoothing_window=1))
    assert out["1"].frames.tolist() == [0, 1, 2]
    assert out["1"].x.tolist() == [0.0, 5.0, 10.0]


def test_smoothing_reduces_noise(rng):
    n = 200
    truth = 25.0 * 0.04 * np.arange(n)
    noisy = truth + rng.normal(0.0, 0.3, n)
    ts = TrackSet(0.04, {"1": _track("1", range(n), noisy, vx=np.full(n, 25.0))})
    out = resample_and_smooth(ts, IngestConfig(smoothing_window=5))["1"]
    assert np.sqrt(np.mean((out.x - truth) ** 2)) < np.sqrt(np.mean((noisy - truth) ** 2))
    # endpoints pass through
    assert out.x[0] == noisy[0] and out.x[-1] == noisy[-1]
    # interior mean preserved for a linear signal
    lin = TrackSet(0.04, {"1": _track("1", range(n), truth)})
    assert resample_and_smooth(lin, IngestConfig(smoothing_window=5))["1"].x.mean() == pytest.approx(truth.mean(), abs=1e-9)


def test_short_track_rejected():
    ts = TrackSet(0.04, {"1": _track("1", [0], [0.0])})
    with pytest.raises(TrackTooShort):
        resample_and_smooth(ts)


def test_gap_fill_and_split():
    frames = list(range(10)) + list(range(15, 25)) + list(range(60, 70))
    x = np.array(frames, float)
    ts = TrackSet(0.04, {"7": _track("7", frames, x, vx=np.full(len(frames), 25.0))})
    out = resample_and_smooth(ts, IngestConfig(smoothing_window=1))
    assert len(out) == 2
    first = out.tracks[out.vehicle_ids[0]]
    assert first.frames.tolist() == list(range(25))


def test_load_tracks_resamples(tmp_path):
    rows = "".join(f"{f},1,{f * 2.0},0,50,0,1\n" for f in range(0, 20, 2))
    ts = load_tracks(_csv(tmp_path, rows), IngestConfig(dt=0.04, source_dt=0.08, smoothing_window=1))
    # source frame f sits at t = 0.08 f, i.e. target frame 2 f
    assert ts["1"].frames.tolist() == list(range(37))
    assert ts["1"].x[1] == pytest.approx(1.0)


# -- validate -----------------------------------------------------------------------

def test_validate_reports(tmp_path):
    rm = parse_road_map(_lane_map(tmp_path, [
        {"lane_id": "2", "centerline": [[0, 0], [200, 0]], "left": "3"},
        {"lane_id": "3", "centerline": [[0, 3.5], [200, 3.5]], "right": "2"},
    ]))
    on = _track("1", range(5), np.arange(5.0) * 10.0)
    on.lane[:] = "2"
    ts = TrackSet(0.04, {"1": on})
    assert len(validate(ts, rm)) == 0

    off = _track("2", range(5), np.arange(5.0), y=[0, 0, 50, 0, 0])
    rep = validate(TrackSet(0.04, {"2": off}), rm)
    assert [f.kind for f in rep.findings] == ["out_of_corridor"]

    wrong = _track("3", range(5), np.arange(5.0), y=np.full(5, 3.5))
    wrong.lane[:] = "2"
    wrong.lane[:4] = "3"
    rep = validate(TrackSet(0.04, {"3": wrong}), rm)
    assert [f.kind for f in rep.findings] == ["lane_mismatch"]
