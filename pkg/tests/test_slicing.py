import json

import numpy as np
import pytest

from scnmine import synthgen
from scnmine.errors import EgoAbsent
from scnmine.ingest import Track, TrackSet
from scnmine.slicing import (AtomScenario, InteractionType as IT, SliceConfig, classify_interaction, conflict_filter,
                             merge_frames, read_atoms, search_neighbors, segment_stats, slice_all, time_filter,
                             write_atoms)
from scnmine.slicing import slice as slice_ego

RM = synthgen.straight_multilane(3, 1000.0)


def _tr(vid, x0, vx, n=200, y=0.0, vy=None):
    vy = np.zeros(n) if vy is None else np.asarray(vy, float)
    x = x0 + vx * 0.04 * np.arange(n)
    y = y + np.concatenate([[0.0], np.cumsum(vy[:-1]) * 0.04])
    return Track(vid, 4.5, 1.8, np.arange(n), x, y, np.full(n, float(vx)), vy,
                 np.full(n, 0.0 if vx >= 0 else np.pi), np.array([None] * n, dtype=object))


def _ts(*tracks):
    return TrackSet(0.04, {t.vehicle_id: t for t in tracks})


# -- search ----------------------------------------------------------------------

def test_search_single_vehicle():
    assert search_neighbors(_ts(_tr("1", 100, 20)), "1", 0, road_map=RM) == set()


def test_search_range():
    ts = _ts(_tr("1", 100, 20), _tr("2", 150, 20), _tr("3", 250, 20))
    assert search_neighbors(ts, "1", 0, road_map=RM) == {"2"}


def test_search_ego_absent():
    ts = _ts(_tr("1", 100, 20, n=10), _tr("2", 150, 20))
    with pytest.raises(EgoAbsent):
        search_neighbors(ts, "1", 50, road_map=RM)


# -- conflict filter and classification ------------------------------------------------

def test_leader_kept_as_following():
    ts = _ts(_tr("1", 100, 20), _tr("2", 130, 20))
    assert conflict_filter(ts, RM, "1", {"2"}, 0) == {("2", IT.FollowingLine)}


def test_far_lane_removed():
    ts = _ts(_tr("1", 100, 20), _tr("2", 120, 20, y=7.0))
    assert search_neighbors(ts, "1", 0, road_map=RM) == {"2"}
    assert conflict_filter(ts, RM, "1", {"2"}, 0) == set()


def test_crossing_is_static_point(crossing_case):
    ts, rm, _, _ = crossing_case
    frame = ts["1"].first_frame + 130  # inside the 30 m junction radius
    cands = search_neighbors(ts, "1", frame, road_map=rm)
    assert conflict_filter(ts, rm, "1", cands, frame) == {("2", IT.StaticConflictPoint)}


def test_same_lane_ahead_is_following():
    ts = _ts(_tr("1", 100, 20), _tr("2", 130, 20))
    assert classify_interaction(ts, RM, "1", "2", 0) == IT.FollowingLine


def test_head_on_is_heading_line():
    ts = _ts(_tr("1", 100, 10), _tr("2", 300, -10))
    assert classify_interaction(ts, RM, "1", "2", 150) == IT.HeadingLine


def test_cut_in_is_dynamic_conflict(three_phase_case):
    ts, rm, gt, _ = three_phase_case
    e = next(x for x in gt.interactions if x.itype == "DynamicConflictLine")
    mid = int(round((e.start + e.end) / 2 / ts.dt))
    assert classify_interaction(ts, rm, "1", "3", mid) == IT.DynamicConflictLine


def test_ramp_merge_is_static_line(merge_case):
    ts, rm, _, _ = merge_case
    assert classify_interaction(ts, rm, "R1", "M2", 100) == IT.StaticConflictLine


# -- time filter -----------------------------------------------------------------------

def test_no_lateral_motion_inactive():
    ts = _ts(_tr("1", 100, 20), _tr("2", 120, 20, y=3.5))
    assert not time_filter(ts, RM, "1", "2", IT.DynamicConflictLine, 100).active


def test_sustained_lateral_motion_active():
    n = 200
    vy = np.zeros(n)
    vy[50:75] = -0.5  # 1 s toward the ego lane
    ts = _ts(_tr("1", 100, 20), _tr("2", 120, 20, y=3.5, vy=vy))
    res = time_filter(ts, RM, "1", "2", IT.DynamicConflictLine, 70)
    assert res.active
    assert res.onset == 50 and res.offset == 74
    # a run shorter than the 0.5 s window never activates
    vy[:] = 0.0
    vy[50:55] = -0.5
    ts = _ts(_tr("1", 100, 20), _tr("2", 120, 20, y=3.5, vy=vy))
    assert not time_filter(ts, RM, "1", "2", IT.DynamicConflictLine, 54).active


def test_receding_leader_inactive():
    ts = _ts(_tr("1", 100, 20), _tr("2", 130, 25))
    assert not time_filter(ts, RM, "1", "2", IT.FollowingLine, 100).active


# -- merge layer -------------------------------------------------------------------------

def test_constant_pair_one_segment():
    segs = merge_frames([{("2", IT.FollowingLine)}] * 200)
    assert len(segs) == 1 and segs[0].n_frames == 200


def test_type_switch_splits():
    sets = [{("2", IT.FollowingLine)}] * 100 + [{("2", IT.DynamicConflictLine)}] * 100
    segs = merge_frames(sets)
    assert [s.span for s in segs] == [(0, 99), (100, 199)]
    assert [s.itype for s in segs] == [IT.FollowingLine, IT.DynamicConflictLine]


def test_short_dropout_bridged():
    sets = [{("2", IT.FollowingLine)}] * 200
    sets[100] = set()
    assert len(merge_frames(sets, cfg=SliceConfig(merge_gap=5))) == 1
    assert len(merge_frames(sets, cfg=SliceConfig(merge_gap=0))) == 3


def test_empty_frames_are_free_driving():
    sets = [set()] * 10 + [{("2", IT.FollowingLine)}] * 10
    segs = merge_frames(sets, first_frame=5)
    assert [s.itype for s in segs] == [IT.FreeDriving, IT.FollowingLine]
    assert segs[0].span == (5, 14) and segs[1].span == (15, 24)


def test_max_interactive_cap():
    sets = [{(str(k), IT.FollowingLine) for k in range(2, 15)}] * 20
    segs = merge_frames(sets, cfg=SliceConfig(max_interactive=10))
    assert all(len(s.records) <= 10 for s in segs)


# -- whole-ego slicing -----------------------------------------------------------------------

def test_alone_is_one_free_driving_segment():
    segs = slice_ego(_ts(_tr("1", 100, 20)), RM, "1")
    assert [(s.itype, s.span) for s in segs] == [(IT.FreeDriving, (0, 199))]


def test_three_phase_segments(three_phase_case):
    ts, rm, gt, atoms = three_phase_case
    mine = [a for a in atoms if a.ego_id == "1"]
    assert [a.itype for a in mine] == [IT.FollowingLine, IT.DynamicConflictLine, IT.FollowingLine]
    truth = [s.start_frame for s in gt.segments if s.ego_id == "1"]
    found = [a.start_frame for a in mine]
    assert np.all(np.abs(np.array(found) - np.array(truth)) * ts.dt <= 0.5)


def test_non_interactive_absent():
    spec = synthgen.filter_corpus(1, seed=4)[0]
    ts, rm, gt = synthgen.generate(spec)
    interactive = {e.other_id for e in spec.expected}
    for a in slice_ego(ts, rm, "1"):
        assert set(a.interactive) <= interactive


def test_partition_and_cap(merge_case, three_phase_case, crossing_case):
    for ts, _, _, atoms in (merge_case, three_phase_case, crossing_case):
        for vid in ts.vehicle_ids:
            spans = sorted(a.span for a in atoms if a.ego_id == vid)
            assert spans[0][0] == ts[vid].first_frame and spans[-1][1] == ts[vid].last_frame
            assert all(b[0] == a[1] + 1 for a, b in zip(spans, spans[1:]))
        assert all(len(a.interactive) <= 10 for a in atoms)


def test_slice_all_threads_do_not_change_output(three_phase_case):
    ts, rm, _, atoms = three_phase_case
    again = slice_all(ts, rm, threads=3)
    assert [a.to_dict() for a in again] == [a.to_dict() for a in atoms]


# -- statistics and store ---------------------------------------------------------------------

def test_stats_empty():
    rep = segment_stats([])
    assert rep.count_hist == {} and rep.searched == 0 and rep.filtered_proportion == 0.0


def test_stats_arithmetic():
    from scnmine.slicing import InteractionRecord
    recs = (InteractionRecord("2", IT.FollowingLine, 0, 249), InteractionRecord("3", IT.FollowingLine, 0, 249))
    atom = AtomScenario(0, "1", 0, 249, IT.FollowingLine, recs, {"searched": 7, "interactive": 2})
    rep = segment_stats([atom])
    assert rep.duration_hist == {10.0: 1}
    assert rep.count_hist == {2: 1}
    assert rep.filtered_proportion == pytest.approx(5 / 7)


def test_store_round_trip(tmp_path, merge_case):
    ts, rm, _, atoms = merge_case
    from scnmine.ingest import write_tracks
    from scnmine.roadmap import write_road_map
    write_tracks(ts, tmp_path / "t.csv")
    write_road_map(rm, tmp_path / "m.json")
    write_atoms(atoms, tmp_path / "a.jsonl", tmp_path / "t.csv", tmp_path / "m.json")
    back = read_atoms(tmp_path / "a.jsonl")
    assert [a.to_dict() for a in back] == [a.to_dict() for a in atoms]
    assert back[0].source is not None
    first = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
    assert first["schema_version"] == 1
    assert first["source"] == {"tracks": "t.csv", "map": "m.json"}


def test_interaction_type_names():
    assert IT.parse("static_conflict_line") is IT.StaticConflictLine
    assert IT.StaticConflictPoint.snake == "static_conflict_point"
    with pytest.raises(ValueError):
        IT.parse("nope")
