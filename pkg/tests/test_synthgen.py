import numpy as np
import pytest

from scnmine import synthgen
from scnmine.errors import InvalidScript
from scnmine.ingest import write_tracks
from scnmine.roadmap import write_road_map
from scnmine.slicing import InteractionType as IT, slice_all
from scnmine.synthgen import ActorScript, Phase, ScriptSpec


def _bytes(spec, tmp_path, tag):
    ts, rm, gt = synthgen.generate(spec)
    write_tracks(ts, tmp_path / f"{tag}.csv")
    write_road_map(rm, tmp_path / f"{tag}.json")
    return (tmp_path / f"{tag}.csv").read_bytes(), (tmp_path / f"{tag}.json").read_bytes(), gt.to_dict()


@pytest.mark.parametrize("make", [
    lambda: synthgen.three_phase_script(4, noise=0.1),
    lambda: synthgen.merge_script(2, noise=0.05),
    lambda: synthgen.cut_in_script(9, "low_ttc"),
])
def test_reproducible(make, tmp_path):
    assert _bytes(make(), tmp_path, "a") == _bytes(make(), tmp_path, "b")


def test_different_seeds_differ(tmp_path):
    a = _bytes(synthgen.three_phase_script(1, noise=0.1), tmp_path, "a")
    b = _bytes(synthgen.three_phase_script(2, noise=0.1), tmp_path, "b")
    assert a[0] != b[0]


def test_spec_json_round_trip():
    spec = synthgen.three_phase_script(3)
    assert ScriptSpec.from_json(spec.to_json()) == spec
    with pytest.raises(InvalidScript):
        ScriptSpec.from_json('{"seed": 1, "template": "ramp_merge", "actors": [{"vehicle_id": "1"}]}')


@pytest.mark.parametrize("make", [
    synthgen.follow_script, synthgen.three_phase_script, synthgen.merge_script, synthgen.crossing_script,
    lambda: synthgen.cut_in_script(0, "right_of_way"),
])
def test_kinematic_consistency(make):
    ts, _, _ = synthgen.generate(make())
    for tr in ts.tracks.values():
        dt = tr.dt
        np.testing.assert_allclose(np.diff(tr.x), tr.vx[:-1] * dt, atol=1e-6)
        np.testing.assert_allclose(np.diff(tr.y), tr.vy[:-1] * dt, atol=1e-6)


def test_single_actor_free_driving():
    spec = ScriptSpec(0, "straight_multilane", [ActorScript("1", "2", 10.0, 15.0, [Phase("cruise", 5.0)])])
    ts, _, gt = synthgen.generate(spec)
    assert len(gt.segments) == 1
    seg = gt.segments[0]
    assert (seg.itype, seg.start_frame, seg.end_frame) == ("FreeDriving", 0, len(ts["1"]) - 1)


def test_follow_ground_truth():
    ts, _, gt = synthgen.generate(synthgen.follow_script(duration=8.0))
    assert len(gt.segments) == 1
    seg = gt.segments[0]
    assert seg.itype == "FollowingLine" and seg.others == ("2",)
    assert (seg.start_frame, seg.end_frame) == (ts["2"].first_frame, ts["2"].last_frame)


def test_merge_ground_truth_matches_slicer():
    ts, rm, gt = synthgen.generate(synthgen.merge_script(0, n_main=3))
    assert {(e.other_id, e.itype) for e in gt.interactions} == {(f"M{k}", "StaticConflictLine") for k in (1, 2, 3)}
    assert gt.segments[0].itype == "StaticConflictLine" and gt.segments[0].others == ("M1", "M2", "M3")
    atoms = slice_all(ts, rm, egos=["R1"])
    partners = {r.other_id for a in atoms for r in a.records if r.itype == IT.StaticConflictLine}
    assert partners == {"M1", "M2", "M3"}


@pytest.mark.parametrize("mutate", [
    lambda s: setattr(s, "template", "roundabout"),
    lambda s: setattr(s.actors[0], "lane", "nope"),
    lambda s: setattr(s.actors[0], "phases", []),
    lambda s: setattr(s.actors[0].phases[0], "maneuver", "teleport"),
    lambda s: setattr(s.actors[0].phases[0], "duration", -1.0),
    lambda s: setattr(s.actors[1], "vehicle_id", "1"),
    lambda s: setattr(s, "noise", -0.1),
])
def test_invalid_scripts(mutate):
    spec = synthgen.follow_script()
    mutate(spec)
    with pytest.raises(InvalidScript):
        synthgen.generate(spec)


def test_lane_change_ends_in_next_lane():
    spec = ScriptSpec(0, "straight_multilane", [
        ActorScript("1", "1", 10.0, 20.0, [Phase("cruise", 1.0), Phase("lane_change", 4.0, {"direction": "left"}),
                                           Phase("cruise", 1.0)])])
    ts, rm, _ = synthgen.generate(spec)
    tr = ts["1"]
    width = rm.lanes["1"].width
    assert abs(abs(tr.y[-1] - tr.y[0]) - width) < 1e-6
    assert np.all(np.abs(np.diff(tr.y)) < width * 0.1)


def test_concat_specs():
    a, b = synthgen.follow_script(0, duration=4.0), synthgen.follow_script(1, duration=3.0)
    spec = synthgen.concat_specs([a, b], pause=2.0)
    ids = [x.vehicle_id for x in spec.actors]
    assert ids == ["0_1", "0_2", "1_1", "1_2"]
    starts = {x.vehicle_id: x.start for x in spec.actors}
    assert starts["1_1"] == pytest.approx(6.0)
    assert spec.counts == {"searched": 2, "interactive": 2, "non_interactive": 0}
    ts, _, gt = synthgen.generate(spec)
    assert gt.egos == ["0_1", "1_1"]
    assert ts["0_1"].last_frame < ts["1_1"].first_frame
    with pytest.raises(InvalidScript):
        synthgen.concat_specs([a, synthgen.merge_script()])
    with pytest.raises(InvalidScript):
        synthgen.concat_specs([])


def test_filter_corpus_exact_fraction():
    specs = synthgen.filter_corpus(12, seed=5)
    for sp in specs:
        c = sp.counts
        assert c["non_interactive"] == 3 * c["interactive"]
        assert len(sp.actors) - 1 == c["searched"]
    spec = synthgen.concat_specs(specs)
    assert spec.counts["non_interactive"] / spec.counts["searched"] == 0.75
    with pytest.raises(InvalidScript):
        synthgen.filter_corpus(2, non_interactive_fraction=0.7)


def test_risk_corpus_planted():
    specs, kinds = synthgen.risk_corpus(4, 2, 3, seed=1)
    assert kinds == ["normal"] * 4 + ["low_ttc"] * 2 + ["right_of_way"] * 3
    planted = [sp.planted for sp in specs]
    assert all(not p for p in planted[:4]) and all(len(p) == 1 for p in planted[4:])


def test_intersection_zones():
    rm = synthgen.four_way_intersection()
    assert rm.conflict_zones
    ts, rm2, gt = synthgen.generate(synthgen.crossing_script())
    assert gt.segments[0].itype == "StaticConflictPoint"
