"""Scenario manipulation shared by several test modules."""

import dataclasses

import numpy as np

from scnmine.ingest import Track, TrackSet
from scnmine.recording import Recording
from scnmine.slicing import InteractionRecord


def dilate(atom):
    """Copy of ``atom`` over a recording where every sample is duplicated."""
    rec = atom.source
    tracks = {}
    for vid, t in rec.tracks.tracks.items():
        r = lambda a: np.repeat(a, 2)  # noqa: E731
        f = np.arange(2 * t.first_frame, 2 * t.first_frame + 2 * len(t))
        tracks[vid] = Track(vid, t.length, t.width, f, r(t.x), r(t.y), r(t.vx), r(t.vy), r(t.heading), r(t.lane), t.dt)
    rec2 = Recording(TrackSet(rec.tracks.dt, tracks), rec.road_map)
    recs = tuple(InteractionRecord(x.other_id, x.itype, 2 * x.onset_frame, 2 * x.offset_frame + 1, x.zone_id)
                 for x in atom.records)
    return dataclasses.replace(atom, start_frame=2 * atom.start_frame, end_frame=2 * atom.end_frame + 1,
                               records=recs, source=rec2)
