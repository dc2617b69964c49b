"""Interaction-typed slicing of a track stream into atom scenarios.

Every frame of an ego's lifetime passes four layers:

* search: which vehicles are near the ego (ego-aligned box on open road,
  radius around junctions);
* yes/no filter: whether a neighbour's future flow over the horizon overlaps
  the ego's future flow on a shared lane, or both enter one conflict zone;
* time filter: when the interaction is live, i.e. the critical state of its
  type holds for at least the configured window;
* merge: consecutive frames with the same (vehicle, type) set become one
  segment.

All layers are evaluated per (ego, other) pair over whole frame arrays, so
cost grows with frames x searched vehicles.
"""

from __future__ import annotations

import builtins
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

from ._geometry import angle_diff
from .errors import EgoAbsent, Unclassifiable
from .ingest import TrackSet, natural_key
from .recording import Recording

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class InteractionType(str, Enum):
    FollowingLine = "FollowingLine"
    HeadingLine = "HeadingLine"
    DynamicConflictLine = "DynamicConflictLine"
    StaticConflictLine = "StaticConflictLine"
    StaticConflictPoint = "StaticConflictPoint"
    FreeDriving = "FreeDriving"

    @property
    def snake(self):
        """``StaticConflictLine`` -> ``static_conflict_line``."""
        out = []
        for ch in self.value:
            if ch.isupper() and out:
                out.append("_")
            out.append(ch.lower())
        return "".join(out)

    @property
    def is_static(self):
        return self in (InteractionType.StaticConflictLine, InteractionType.StaticConflictPoint)

    @classmethod
    def parse(cls, name):
        """Accept either the CamelCase value or its snake_case form."""
        if isinstance(name, cls):
            return name
        for member in cls:
            if name in (member.value, member.snake):
                return member
        raise ValueError(f"unknown interaction type {name!r}")


# integer codes used inside the pair arrays; order is irrelevant to priority
_TYPES = (
    InteractionType.FollowingLine,
    InteractionType.HeadingLine,
    InteractionType.DynamicConflictLine,
    InteractionType.StaticConflictLine,
    InteractionType.StaticConflictPoint,
)
_FL, _HL, _DCL, _SCL, _SCP = range(5)

PRIORITY = {
    InteractionType.StaticConflictPoint: 5,
    InteractionType.StaticConflictLine: 4,
    InteractionType.HeadingLine: 3,
    InteractionType.DynamicConflictLine: 2,
    InteractionType.FollowingLine: 1,
    InteractionType.FreeDriving: 0,
}


@dataclass(frozen=True)
class InteractionRecord:
    other_id: str
    itype: InteractionType
    onset_frame: int
    offset_frame: int
    zone_id: str | None = None

    def __post_init__(self):
        if self.onset_frame > self.offset_frame:
            raise ValueError("onset after offset")
        if self.itype.is_static != (self.zone_id is not None):
            raise ValueError("zone_id is required for static types and only for them")

    def to_dict(self):
        return {
            "other_id": self.other_id,
            "itype": self.itype.value,
            "onset_frame": self.onset_frame,
            "offset_frame": self.offset_frame,
            "zone_id": self.zone_id,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(str(d["other_id"]), InteractionType.parse(d["itype"]), int(d["onset_frame"]),
                   int(d["offset_frame"]), d.get("zone_id"))


@dataclass
class AtomScenario:
    """One sliced segment of an ego's lifetime.

    The interactive set is constant over ``[start_frame, end_frame]``.
    ``source`` (not serialized) is the ``Recording`` the segment was cut from;
    scene graphs and distances need it.
    """

    scenario_id: int
    ego_id: str
    start_frame: int
    end_frame: int
    itype: InteractionType
    records: tuple = ()
    filtered_counts: dict = field(default_factory=lambda: {"searched": 0, "interactive": 0})
    behavior_label: str = ""
    task_set: tuple = ()
    dt: float = 0.04
    source: Recording | None = field(default=None, compare=False, repr=False)

    @property
    def span(self):
        return (self.start_frame, self.end_frame)

    @property
    def n_frames(self):
        return self.end_frame - self.start_frame + 1

    @property
    def frames(self):
        return range(self.start_frame, self.end_frame + 1)

    @property
    def duration(self):
        return self.n_frames * self.dt

    @property
    def interactive(self):
        return sorted({r.other_id for r in self.records}, key=natural_key)

    def vehicles_at(self, frame):
        """Interactive set V_t (constant over the span)."""
        if not self.start_frame <= frame <= self.end_frame:
            return []
        return self.interactive

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario_id": self.scenario_id,
            "ego_id": self.ego_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "itype": self.itype.value,
            "dt": self.dt,
            "interactive": self.interactive,
            "records": [r.to_dict() for r in self.records],
            "filtered_counts": dict(self.filtered_counts),
            "behavior_label": self.behavior_label,
            "task_set": list(self.task_set),
        }

    @classmethod
    def from_dict(cls, d, source=None):
        return cls(
            scenario_id=int(d["scenario_id"]),
            ego_id=str(d["ego_id"]),
            start_frame=int(d["start_frame"]),
            end_frame=int(d["end_frame"]),
            itype=InteractionType.parse(d["itype"]),
            records=tuple(InteractionRecord.from_dict(r) for r in d["records"]),
            filtered_counts={k: int(v) for k, v in d["filtered_counts"].items()},
            behavior_label=d.get("behavior_label", ""),
            task_set=tuple(d.get("task_set", ())),
            dt=float(d.get("dt", 0.04)),
            source=source,
        )


@dataclass(frozen=True)
class SliceConfig:
    """Slicing thresholds. Distances in meters, times in seconds.

    The lateral search half-width covers two lanes of 3.5 m on each side.
    """

    search_ahead: float = 100.0
    search_behind: float = 50.0
    search_lateral: float = 8.75
    junction_radius: float = 30.0
    horizon: float = 5.0
    window: float = 0.5
    lateral_velocity_threshold: float = 0.2
    closing_rate_threshold: float = 0.1
    zone_rate_threshold: float = 0.1
    heading_opposite_deg: float = 150.0
    following_max_heading_deg: float = 90.0
    merge_gap: int = 5
    max_interactive: int = 10

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0 and f.name != "merge_gap":
                raise ValueError(f"{f.name} must be positive")
        if self.merge_gap < 0:
            raise ValueError("merge_gap must be >= 0")

    def horizon_frames(self, dt):
        return int(round(self.horizon / dt))

    def window_frames(self, dt):
        return max(1, int(round(self.window / dt)))


class TimeFilterResult(NamedTuple):
    active: bool
    onset: int | None
    offset: int | None


# ---------------------------------------------------------------------------
# array helpers
# ---------------------------------------------------------------------------

def _runs(values):
    """Start and inclusive end of each run of equal consecutive values."""
    values = np.asarray(values)
    if values.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change - 1, [values.size - 1]])
    return starts, ends


def _true_runs(mask):
    mask = np.asarray(mask, dtype=bool)
    starts, ends = _runs(mask)
    keep = mask[starts] if starts.size else np.zeros(0, dtype=bool)
    return starts[keep], ends[keep]


def _keep_long_runs(code, min_len):
    """Reset runs of a non-negative code shorter than ``min_len`` to -1."""
    out = code.copy()
    starts, ends = _runs(code)
    for a, b in zip(starts, ends):
        if code[a] >= 0 and b - a + 1 < min_len:
            out[a:b + 1] = -1
    return out


def _fill_gaps(code, max_gap):
    """Fill -1 gaps of at most ``max_gap`` frames between two equal codes."""
    if max_gap <= 0:
        return code
    out = code.copy()
    starts, ends = _runs(code)
    for k in range(1, len(starts) - 1):
        a, b = starts[k], ends[k]
        if code[a] < 0 and b - a + 1 <= max_gap and code[a - 1] == code[b + 1] >= 0:
            out[a:b + 1] = code[a - 1]
    return out


def _next_true(mask):
    """Index of the next True at or after each position (``big`` when none)."""
    m = mask.shape[-1]
    idx = np.where(mask, np.arange(m), np.iinfo(np.int64).max // 2)
    return np.minimum.accumulate(idx[..., ::-1], axis=-1)[..., ::-1]


@njit(cache=True)
def _sweep(lane, prog, lane2, prog2, valid, n, h, n_lanes):
    """Per-lane min/max progress the vehicle covers over ``[t, t + h]``.

    ``lane2``/``prog2`` is the second lane occupied during a lane change (-1 if none).
    """
    emin = np.full((n_lanes, n), np.inf)
    emax = np.full((n_lanes, n), -np.inf)
    m = lane.size
    for t in range(n):
        end = min(t + h + 1, m)
        for tau in range(t, end):
            if not valid[tau]:
                continue
            for which in range(2):
                k = lane[tau] if which == 0 else lane2[tau]
                if k < 0:
                    continue
                p = prog[tau] if which == 0 else prog2[tau]
                if p < emin[k, t]:
                    emin[k, t] = p
                if p > emax[k, t]:
                    emax[k, t] = p
    return emin, emax


@njit(cache=True)
def _overlap(mask, emin, emax, lane, prog, lane2, prog2, valid, h, pad):
    """Whether the other's future samples fall inside the ego's future sweep."""
    n = mask.size
    m = lane.size
    n_lanes = emin.shape[0]
    visited = np.zeros(n_lanes, dtype=np.bool_)
    for k in range(n_lanes):
        for t in range(n):
            if emin[k, t] < np.inf:
                visited[k] = True
                break
    nxt = np.empty(m + 1, dtype=np.int64)
    nxt[m] = m
    for tau in range(m - 1, -1, -1):
        k = lane[tau]
        k2 = lane2[tau]
        hit = valid[tau] and ((k >= 0 and visited[k]) or (k2 >= 0 and visited[k2]))
        nxt[tau] = tau if hit else nxt[tau + 1]
    out = np.zeros(n, dtype=np.bool_)
    for t in range(n):
        if not mask[t]:
            continue
        end = min(t + h, m - 1)
        tau = nxt[t]
        while tau <= end:
            for which in range(2):
                k = lane[tau] if which == 0 else lane2[tau]
                if k < 0:
                    continue
                p = prog[tau] if which == 0 else prog2[tau]
                if emin[k, t] - pad <= p <= emax[k, t] + pad:
                    out[t] = True
                    break
            if out[t]:
                break
            tau = nxt[tau + 1]
    return out


# ---------------------------------------------------------------------------
# per-vehicle views aligned on the ego's frames
# ---------------------------------------------------------------------------

class _View(NamedTuple):
    present: np.ndarray
    valid: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    heading: np.ndarray
    lane: np.ndarray
    progress: np.ndarray
    v_lat: np.ndarray
    zone_in: np.ndarray
    zone_dist: np.ndarray
    zone_rate: np.ndarray
    lc_src: np.ndarray
    lc_tgt: np.ndarray
    lane2: np.ndarray  # other lane occupied during a lane change, else -1
    progress2: np.ndarray
    length: float


class SliceContext:
    """Recording plus per-vehicle derived arrays shared by all egos."""

    def __init__(self, rec, cfg):
        self.rec = rec
        self.cfg = cfg
        self.dt = rec.dt
        self.h = cfg.horizon_frames(rec.dt)
        rm = rec.road_map
        self.n_lanes = len(rm.lane_ids)
        self.n_zones = len(rm.conflict_zones)
        self.zone_is_point = np.array([z.kind == "static_point" for z in rm.conflict_zones], dtype=bool)
        self.lane_junction = np.array([rm.lanes[l].type != "normal" for l in rm.lane_ids] + [False])
        link = np.zeros((self.n_lanes, self.n_lanes), dtype=bool)
        for i, a in enumerate(rm.lane_ids):
            for j, b in enumerate(rm.lane_ids):
                link[i, j] = rm.linked(a, b)
        self.link = link
        self._lat = {}
        self._rates = {}
        self._warned = set()

    def lateral_runs(self, vid):
        """Source/target lane of each sample inside a lane-changing lateral run, else -1."""
        out = self._lat.get(vid)
        if out is None:
            g = self.rec.geometry(vid)
            src = np.full(len(g.lane), -1, dtype=np.int64)
            tgt = src.copy()
            starts, ends = _true_runs(np.abs(g.v_lat) >= self.cfg.lateral_velocity_threshold)
            for a, b in zip(starts, ends):
                s, t = g.lane[a], g.lane[b]
                if s >= 0 and t >= 0 and s != t:
                    src[a:b + 1] = s
                    tgt[a:b + 1] = t
            out = (src, tgt)
            self._lat[vid] = out
        return out

    def zone_rates(self, vid):
        out = self._rates.get(vid)
        if out is None:
            zd = self.rec.geometry(vid).zone_dist
            if zd.shape[1] >= 2:
                out = np.gradient(zd, self.dt, axis=1)
            else:
                out = np.zeros_like(zd)
            self._rates[vid] = out
        return out

    def view(self, vid, f0, m):
        """Arrays over frames ``f0 .. f0 + m - 1``; up to ``h`` frames past the
        track end are extrapolated at constant velocity (``valid`` but not ``present``)."""
        tr = self.rec.tracks[vid]
        g = self.rec.geometry(vid)
        src, tgt = self.lateral_runs(vid)
        Z = self.n_zones
        present = np.zeros(m, dtype=bool)
        valid = np.zeros(m, dtype=bool)
        x = np.full(m, np.nan)
        y = np.full(m, np.nan)
        vx = np.full(m, np.nan)
        vy = np.full(m, np.nan)
        heading = np.full(m, np.nan)
        lane = np.full(m, -1, dtype=np.int64)
        progress = np.full(m, np.nan)
        v_lat = np.full(m, np.nan)
        zone_in = np.zeros((Z, m), dtype=bool)
        zone_dist = np.full((Z, m), np.nan)
        zone_rate = np.full((Z, m), np.nan)
        lc_src = np.full(m, -1, dtype=np.int64)
        lc_tgt = np.full(m, -1, dtype=np.int64)
        lane2 = np.full(m, -1, dtype=np.int64)
        progress2 = np.full(m, np.nan)
        a = max(f0, tr.first_frame)
        b = min(f0 + m - 1, tr.last_frame)
        if a <= b:
            dst = builtins.slice(a - f0, b - f0 + 1)
            sl = builtins.slice(a - tr.first_frame, b - tr.first_frame + 1)
            present[dst] = True
            x[dst], y[dst], vx[dst], vy[dst] = tr.x[sl], tr.y[sl], tr.vx[sl], tr.vy[sl]
            heading[dst], lane[dst], progress[dst], v_lat[dst] = g.heading[sl], g.lane[sl], g.progress[sl], g.v_lat[sl]
            zone_in[:, dst] = g.zone_in[:, sl]
            zone_dist[:, dst] = g.zone_dist[:, sl]
            zone_rate[:, dst] = self.zone_rates(vid)[:, sl]
            lc_src[dst], lc_tgt[dst] = src[sl], tgt[sl]
            other = np.where(src[sl] == g.lane[sl], tgt[sl], src[sl])
            other = np.where(src[sl] >= 0, other, -1)
            lane2[dst] = other
            if other.size and (other >= 0).any():
                cols = np.arange(other.size)
                progress2[dst] = np.where(other >= 0, g.lane_progress[np.maximum(other, 0), cols + sl.start], np.nan)
        valid[:] = present
        # constant-velocity continuation over a truncated future window
        e0 = max(tr.last_frame + 1, f0)
        e1 = min(tr.last_frame + self.h, f0 + m - 1)
        if e0 <= e1:
            k = np.arange(e0, e1 + 1) - tr.last_frame
            dst = builtins.slice(e0 - f0, e1 - f0 + 1)
            dt = self.dt
            valid[dst] = True
            x[dst] = tr.x[-1] + tr.vx[-1] * k * dt
            y[dst] = tr.y[-1] + tr.vy[-1] * k * dt
            vx[dst], vy[dst], heading[dst] = tr.vx[-1], tr.vy[-1], g.heading[-1]
            lane[dst] = g.lane[-1]
            progress[dst] = g.progress[-1] + g.v_lon[-1] * k * dt
            v_lat[dst] = 0.0
        return _View(present, valid, x, y, vx, vy, heading, lane, progress, v_lat, zone_in, zone_dist,
                     zone_rate, lc_src, lc_tgt, lane2, progress2, float(tr.length))

    def warn_unclassifiable(self, ego_id, other_id):
        key = (ego_id, other_id)
        if key not in self._warned:
            self._warned.add(key)
            err = Unclassifiable(key)
            logger.warning("dropping pair: %s", err)


class _Pair(NamedTuple):
    other_id: str
    searched: np.ndarray  # (n,) bool
    kept: np.ndarray  # passed the yes/no filter
    itype: np.ndarray  # provisional type code or -1
    zone: np.ndarray  # zone index or -1
    state_ok: np.ndarray  # critical state of the provisional type holds
    code: np.ndarray  # combined (type, zone) code after the time filter, -1 inactive


class _EgoSlicer:
    """All pair computations for one ego over its whole lifetime."""

    def __init__(self, ctx, ego_id):
        if ego_id not in ctx.rec.tracks:
            raise EgoAbsent(None, ego_id)
        self.ctx = ctx
        self.ego_id = ego_id
        tr = ctx.rec.tracks[ego_id]
        self.f0 = tr.first_frame
        self.n = len(tr)
        self.m = self.n + ctx.h
        self.E = ctx.view(ego_id, self.f0, self.m)
        E, n, h = self.E, self.n, ctx.h
        self.emin, self.emax = _sweep(E.lane, E.progress, E.lane2, E.progress2, E.valid, n, h,
                                      max(ctx.n_lanes, 1))
        self.E_next = _next_true(E.zone_in) if ctx.n_zones else np.zeros((0, self.m), dtype=np.int64)
        cfg = ctx.cfg
        lane_j = ctx.lane_junction[np.where(E.lane[:n] >= 0, E.lane[:n], -1)]
        near_point = np.zeros(n, dtype=bool)
        if ctx.n_zones and ctx.zone_is_point.any():
            near_point = (E.zone_dist[ctx.zone_is_point, :n] <= cfg.junction_radius).any(axis=0)
        self.junction = lane_j | near_point
        c, s = np.cos(E.heading[:n]), np.sin(E.heading[:n])
        self._cs = (c, s)
        self.others = [v for v in ctx.rec.tracks.vehicle_ids if v != ego_id and self._overlaps_in_time(v)]
        self._pairs = {}

    def _overlaps_in_time(self, vid):
        tr = self.ctx.rec.tracks[vid]
        return tr.first_frame <= self.f0 + self.n - 1 and tr.last_frame >= self.f0

    def frame_index(self, frame):
        i = int(frame) - self.f0
        if not 0 <= i < self.n:
            raise EgoAbsent(frame, self.ego_id)
        return i

    # -- layers --------------------------------------------------------------
    def _search(self, O):
        cfg, E, n = self.ctx.cfg, self.E, self.n
        dx = O.x[:n] - E.x[:n]
        dy = O.y[:n] - E.y[:n]
        c, s = self._cs
        lon = dx * c + dy * s
        lat = -dx * s + dy * c
        box = (lon <= cfg.search_ahead) & (lon >= -cfg.search_behind) & (np.abs(lat) <= cfg.search_lateral)
        ring = np.hypot(dx, dy) <= cfg.junction_radius
        with np.errstate(invalid="ignore"):
            return O.present[:n] & np.where(self.junction, ring, box)

    def pair(self, other_id):
        res = self._pairs.get(other_id)
        if res is None:
            res = self._compute_pair(other_id)
            self._pairs[other_id] = res
        return res

    def _compute_pair(self, oid):
        ctx, cfg, E, n, h = self.ctx, self.ctx.cfg, self.E, self.n, self.ctx.h
        O = ctx.view(oid, self.f0, self.m)
        searched = self._search(O)
        none = np.full(n, -1, dtype=np.int64)
        if not searched.any():
            z = np.zeros(n, dtype=bool)
            return _Pair(oid, searched, z, none, none, z, none)
        pad = 0.5 * (E.length + O.length)
        kept = _overlap(searched, self.emin, self.emax, O.lane, O.progress, O.lane2, O.progress2, O.valid, h, pad)
        t_idx = np.arange(n)
        if ctx.n_zones:
            O_next = _next_true(O.zone_in)
            common = (self.E_next[:, :n] <= t_idx + h) & (O_next[:, :n] <= t_idx + h)
            kept |= searched & common.any(axis=0)
        else:
            common = np.zeros((0, n), dtype=bool)

        # classification, rules in decreasing precedence
        le, lo = E.lane[:n], O.lane[:n]
        itype = np.full(n, -1, dtype=np.int64)
        zone = np.full(n, -1, dtype=np.int64)
        undecided = kept.copy()
        ok_lanes = (le >= 0) & (lo >= 0)
        linked = np.zeros(n, dtype=bool)
        linked[ok_lanes] = ctx.link[le[ok_lanes], lo[ok_lanes]]
        diff_lane = ~linked  # a lane and its successor are one physical lane here
        for kind_is_point, code in ((True, _SCP), (False, _SCL)):
            if not ctx.n_zones:
                break
            cand = common & (ctx.zone_is_point == kind_is_point)[:, None]
            hit = undecided & cand.any(axis=0) & diff_lane
            if hit.any():
                dist = np.where(cand, E.zone_dist[:, :n], np.inf)
                zone[hit] = np.argmin(dist[:, hit], axis=0)
                itype[hit] = code
                undecided &= ~hit
        hd = angle_diff(E.heading[:n], O.heading[:n])
        with np.errstate(invalid="ignore"):
            hit = undecided & (hd > math.radians(cfg.heading_opposite_deg))
        itype[hit] = _HL
        undecided &= ~hit
        # a lane-changing run whose target is the other vehicle's lane
        dcl = ((E.lc_tgt[:n] >= 0) & (E.lc_tgt[:n] == lo)) | ((O.lc_tgt[:n] >= 0) & (O.lc_tgt[:n] == le))
        hit = undecided & dcl & (le >= 0) & (lo >= 0)
        itype[hit] = _DCL
        undecided &= ~hit
        with np.errstate(invalid="ignore"):
            hit = undecided & linked & (hd < math.radians(cfg.following_max_heading_deg))
        itype[hit] = _FL
        undecided &= ~hit
        if undecided.any():
            ctx.warn_unclassifiable(self.ego_id, oid)

        state_ok = self._state_ok(O, itype, zone)
        code = np.where((itype >= 0) & state_ok, itype * (ctx.n_zones + 1) + zone + 1, -1)
        code = _keep_long_runs(code, cfg.window_frames(ctx.dt))
        return _Pair(oid, searched, kept, itype, zone, state_ok, code)

    def _state_ok(self, O, itype, zone):
        """Critical state per provisional type."""
        cfg, E, n = self.ctx.cfg, self.E, self.n
        ok = np.zeros(n, dtype=bool)
        with np.errstate(invalid="ignore", divide="ignore"):
            # line-of-sight gap rate for following / head-on
            dx, dy = O.x[:n] - E.x[:n], O.y[:n] - E.y[:n]
            dvx, dvy = O.vx[:n] - E.vx[:n], O.vy[:n] - E.vy[:n]
            gap_rate = (dx * dvx + dy * dvy) / np.maximum(np.hypot(dx, dy), 1e-9)
            m = (itype == _FL) | (itype == _HL)
            ok[m] = gap_rate[m] <= cfg.closing_rate_threshold
            m = itype == _DCL
            ok[m] = np.maximum(np.abs(E.v_lat[:n]), np.abs(O.v_lat[:n]))[m] >= cfg.lateral_velocity_threshold
            m = (itype == _SCL) | (itype == _SCP)
            if m.any():
                t = np.flatnonzero(m)
                z = zone[t]
                re, ro = E.zone_rate[z, t], O.zone_rate[z, t]
                ok[t] = (re <= cfg.zone_rate_threshold) & (ro <= cfg.zone_rate_threshold)
        return ok

    # -- merge ---------------------------------------------------------------
    def segments(self):
        """Merge per-frame record sets into atom scenarios (scenario ids are local)."""
        ctx, cfg, n = self.ctx, self.ctx.cfg, self.n
        pairs = [self.pair(o) for o in self.others]
        pairs = [p for p in pairs if p.searched.any()]
        if pairs:
            C = np.stack([_fill_gaps(p.code, cfg.merge_gap) for p in pairs])
            S = np.stack([p.searched for p in pairs])
        else:
            C = np.full((0, n), -1, dtype=np.int64)
            S = np.zeros((0, n), dtype=bool)
        active = C >= 0
        if len(pairs) > cfg.max_interactive:
            # keep the earliest-appearing vehicles when over the cap
            first = np.where(active.any(axis=1), active.argmax(axis=1), n)
            order = np.argsort(first, kind="stable")
            rank_cum = np.cumsum(active[order], axis=0)
            over = np.zeros_like(active)
            over[order] = rank_cum > cfg.max_interactive
            C = np.where(over, -1, C)
            active = C >= 0
        if n > 1 and len(pairs):
            change = np.flatnonzero((C[:, 1:] != C[:, :-1]).any(axis=0)) + 1
        else:
            change = np.zeros(0, dtype=np.int64)
        starts = np.concatenate([[0], change]).astype(np.int64)
        ends = np.concatenate([change - 1, [n - 1]]).astype(np.int64)
        run_bounds = [_runs(row) for row in C]
        zones = ctx.rec.road_map.conflict_zones
        out = []
        for a, b in zip(starts, ends):
            recs = []
            for k in np.flatnonzero(C[:, a] >= 0):
                code = int(C[k, a])
                t_idx, z_idx = divmod(code, ctx.n_zones + 1)
                rs, re_ = run_bounds[k]
                r = np.searchsorted(rs, a, side="right") - 1
                recs.append(InteractionRecord(
                    other_id=pairs[k].other_id,
                    itype=_TYPES[t_idx],
                    onset_frame=int(self.f0 + rs[r]),
                    offset_frame=int(self.f0 + re_[r]),
                    zone_id=zones[z_idx - 1].zone_id if z_idx > 0 else None,
                ))
            recs.sort(key=lambda r: (natural_key(r.other_id), r.itype.value))
            itype = max((r.itype for r in recs), key=PRIORITY.get, default=InteractionType.FreeDriving)
            searched = int(S[:, a:b + 1].any(axis=1).sum())
            out.append(AtomScenario(
                scenario_id=len(out),
                ego_id=self.ego_id,
                start_frame=int(self.f0 + a),
                end_frame=int(self.f0 + b),
                itype=itype,
                records=tuple(recs),
                filtered_counts={"searched": searched, "interactive": len(recs)},
                dt=ctx.dt,
                source=ctx.rec,
            ))
        return out


# ---------------------------------------------------------------------------
# public layer operations
# ---------------------------------------------------------------------------

_CTX_CACHE = {}


def _context(ts, road_map, cfg):
    """Reuse the derived arrays when the same inputs are queried repeatedly."""
    cfg = cfg or SliceConfig()
    if isinstance(ts, SliceContext):
        return ts
    rec = ts if isinstance(ts, Recording) else None
    if rec is None:
        if road_map is None:
            from .roadmap import RoadMap
            road_map = RoadMap([])
        key = (id(ts), id(road_map), cfg)
        hit = _CTX_CACHE.get(key)
        if hit is not None and hit.rec.tracks is ts and hit.rec.road_map is road_map:
            return hit
        rec = Recording(ts, road_map)
        ctx = SliceContext(rec, cfg)
        _CTX_CACHE.clear()
        _CTX_CACHE[key] = ctx
        return ctx
    return SliceContext(rec, cfg)


def _slicer(ts, road_map, ego_id, cfg):
    ctx = _context(ts, road_map, cfg)
    if ego_id not in ctx.rec.tracks:
        raise EgoAbsent(None, ego_id)
    return _EgoSlicer(ctx, ego_id)


def search_neighbors(ts, ego_id, frame, cfg=None, road_map=None):
    """Vehicles inside the ego's search scope at ``frame``.

    Without a road map every frame uses the ego-aligned box.
    """
    sl = _slicer(ts, road_map, ego_id, cfg)
    i = sl.frame_index(frame)
    return {o for o in sl.others if sl.pair(o).searched[i]}


def conflict_filter(ts, road_map, ego_id, candidates, frame, cfg=None):
    """Candidates whose future flow meets the ego's, with their provisional type.

    A candidate that passes the geometric test but matches no type rule is
    dropped (one logged warning per pair).
    """
    sl = _slicer(ts, road_map, ego_id, cfg)
    i = sl.frame_index(frame)
    out = set()
    for o in candidates:
        if o not in sl.others:
            continue
        p = sl.pair(o)
        if p.kept[i] and p.itype[i] >= 0:
            out.add((o, _TYPES[p.itype[i]]))
    return out


def classify_interaction(ts, road_map, ego_id, other_id, frame, cfg=None):
    """Interaction type of a pair at ``frame``.

    Raises
    ------
    Unclassifiable
        No rule fires for the pair.
    """
    sl = _slicer(ts, road_map, ego_id, cfg)
    i = sl.frame_index(frame)
    p = sl.pair(other_id)
    code = p.itype[i]
    if code < 0:
        raise Unclassifiable((ego_id, other_id))
    return _TYPES[code]


def time_filter(ts, road_map, ego_id, other_id, itype, frame, cfg=None):
    """Whether the critical state of ``itype`` holds around ``frame``.

    Active iff ``frame`` lies in a run of threshold-meeting samples at least
    one window long; onset/offset are that run's first and last frames.
    Tracks shorter than one window are simply inactive.
    """
    sl = _slicer(ts, road_map, ego_id, cfg)
    ctx = sl.ctx
    i = sl.frame_index(frame)
    p = sl.pair(other_id)
    code = _TYPES.index(InteractionType.parse(itype))
    forced = np.where(p.searched | p.kept, code, -1) if code < _SCL else np.where(p.zone >= 0, code, -1)
    O = ctx.view(other_id, sl.f0, sl.m)
    ok = sl._state_ok(O, forced, p.zone) & (forced >= 0) & O.present[:sl.n]
    starts, ends = _true_runs(ok)
    r = np.searchsorted(starts, i, side="right") - 1
    if r < 0 or ends[r] < i or ends[r] - starts[r] + 1 < ctx.cfg.window_frames(ctx.dt):
        return TimeFilterResult(False, None, None)
    return TimeFilterResult(True, int(sl.f0 + starts[r]), int(sl.f0 + ends[r]))


def merge_frames(frame_sets, first_frame=0, cfg=None, dt=0.04, ego_id=""):
    """Merge explicit per-frame record sets into segments.

    ``frame_sets`` is a sequence of iterables of ``(other_id, InteractionType)``
    (static types may carry a third ``zone_id`` element). Gaps up to
    ``cfg.merge_gap`` frames in a pair's record are bridged; vehicles beyond
    ``cfg.max_interactive`` (latest to appear) are dropped.
    """
    cfg = cfg or SliceConfig()
    n = len(frame_sets)
    keys = sorted({tuple(r) if len(r) == 3 else (r[0], InteractionType.parse(r[1]), None)
                   for fs in frame_sets for r in map(tuple, fs)},
                  key=lambda k: (natural_key(k[0]), k[1].value, k[2] or ""))
    others = sorted({k[0] for k in keys}, key=natural_key)
    codes = {k: i for i, k in enumerate(keys)}
    C = np.full((len(others), n), -1, dtype=np.int64)
    row = {o: i for i, o in enumerate(others)}
    for t, fs in enumerate(frame_sets):
        for r in fs:
            r = tuple(r)
            k = r if len(r) == 3 else (r[0], InteractionType.parse(r[1]), None)
            C[row[k[0]], t] = codes[k]
    C = np.stack([_fill_gaps(c, cfg.merge_gap) for c in C]) if len(others) else C
    active = C >= 0
    if len(others) > cfg.max_interactive:
        first = np.where(active.any(axis=1), active.argmax(axis=1), n)
        order = np.argsort(first, kind="stable")
        over = np.zeros_like(active)
        over[order] = np.cumsum(active[order], axis=0) > cfg.max_interactive
        C = np.where(over, -1, C)
    change = np.flatnonzero((C[:, 1:] != C[:, :-1]).any(axis=0)) + 1 if n > 1 else np.zeros(0, dtype=np.int64)
    starts = np.concatenate([[0], change]).astype(int)
    ends = np.concatenate([change - 1, [n - 1]]).astype(int)
    out = []
    for a, b in zip(starts, ends):
        recs = []
        for k in np.flatnonzero(C[:, a] >= 0):
            oid, it, zid = keys[C[k, a]]
            rs, re_ = _runs(C[k])
            r = np.searchsorted(rs, a, side="right") - 1
            recs.append(InteractionRecord(oid, it, first_frame + int(rs[r]), first_frame + int(re_[r]), zid))
        itype = max((r.itype for r in recs), key=PRIORITY.get, default=InteractionType.FreeDriving)
        out.append(AtomScenario(len(out), ego_id, first_frame + int(a), first_frame + int(b), itype, tuple(recs),
                                {"searched": len(recs), "interactive": len(recs)}, dt=dt))
    return out


def slice(ts, road_map, ego_id, cfg=None):  # noqa: A001 - operation name
    """Cut one ego's lifetime into atom scenarios that partition it exactly."""
    sl = _slicer(ts, road_map, ego_id, cfg)
    return sl.segments()


def slice_all(ts, road_map, cfg=None, egos=None, threads=1):
    """Slice every ego (default: all vehicles) and number scenarios globally.

    Egos are processed in natural id order; ``threads`` only changes the
    schedule, never the output.
    """
    cfg = cfg or SliceConfig()
    rec = ts if isinstance(ts, Recording) else Recording(ts, road_map)
    ctx = SliceContext(rec, cfg)
    egos = rec.tracks.vehicle_ids if egos is None else sorted(egos, key=natural_key)
    for e in egos:
        if e not in rec.tracks:
            raise EgoAbsent(None, e)
    # geometry is cached lazily; fill it up front so worker threads only read
    for vid in rec.tracks.vehicle_ids:
        ctx.lateral_runs(vid)
        ctx.zone_rates(vid)

    def run(e):
        return _EgoSlicer(ctx, e).segments()

    if threads and threads > 1 and len(egos) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, egos))
    else:
        parts = [run(e) for e in egos]
    out = []
    for part in parts:
        for atom in part:
            atom.scenario_id = len(out)
            out.append(atom)
    return out


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class StatsReport:
    """Interactive-count and duration histograms plus filtering totals."""

    count_hist: dict
    duration_hist: dict
    searched: int
    interactive: int
    filtered: int
    filtered_proportion: float
    n_segments: int
    bin_width: float = 1.0

    def to_dict(self):
        return {
            "n_segments": self.n_segments,
            "count_hist": {str(k): v for k, v in self.count_hist.items()},
            "duration_hist": {_fmt_bin(k): v for k, v in self.duration_hist.items()},
            "bin_width": self.bin_width,
            "searched": self.searched,
            "interactive": self.interactive,
            "filtered": self.filtered,
            "filtered_proportion": self.filtered_proportion,
        }


def _fmt_bin(x):
    return repr(float(x))


def segment_stats(atoms, bin_width=1.0):
    """Histograms and searched/interactive/filtered totals over segments.

    Durations fall into ``bin_width``-second bins labelled by their lower edge.
    """
    count_hist, duration_hist = {}, {}
    searched = interactive = 0
    for a in atoms:
        k = len(a.records)
        count_hist[k] = count_hist.get(k, 0) + 1
        b = math.floor(a.duration / bin_width + 1e-9) * bin_width
        duration_hist[b] = duration_hist.get(b, 0) + 1
        searched += a.filtered_counts["searched"]
        interactive += a.filtered_counts["interactive"]
    filtered = searched - interactive
    return StatsReport(
        count_hist=dict(sorted(count_hist.items())),
        duration_hist=dict(sorted(duration_hist.items())),
        searched=searched,
        interactive=interactive,
        filtered=filtered,
        filtered_proportion=filtered / searched if searched else 0.0,
        n_segments=len(atoms),
        bin_width=bin_width,
    )


# ---------------------------------------------------------------------------
# JSON-lines store
# ---------------------------------------------------------------------------

def write_atoms(atoms, path, tracks_path=None, map_path=None):
    """One scenario per line; source paths are stored relative to the store."""
    path = Path(path)
    base = path.resolve().parent
    src = {}
    if tracks_path is not None:
        src["tracks"] = os.path.relpath(Path(tracks_path).resolve(), base)
    if map_path is not None:
        src["map"] = os.path.relpath(Path(map_path).resolve(), base)
    with open(path, "w", encoding="utf-8") as fh:
        for a in atoms:
            d = a.to_dict()
            d["source"] = src
            fh.write(json.dumps(d, sort_keys=True, separators=(",", ":")) + "\n")


def read_atoms(path, load_source=True):
    """Read a store; with ``load_source`` the referenced tracks and map are attached."""
    from .ingest import IngestConfig, parse_tracks
    from .roadmap import parse_road_map

    path = Path(path)
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    for r in rows:
        if r.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {r.get('schema_version')!r}")
    rec = None
    if load_source and rows and rows[0].get("source", {}).get("tracks"):
        src = rows[0]["source"]
        base = path.resolve().parent
        dt = float(rows[0]["dt"])
        ts = parse_tracks(base / src["tracks"], IngestConfig(dt=dt))
        from .roadmap import RoadMap
        rm = parse_road_map(base / src["map"]) if src.get("map") else RoadMap([])
        rec = Recording(ts, rm)
    return [AtomScenario.from_dict(r, source=rec) for r in rows]


__all__ = [
    "AtomScenario",
    "InteractionRecord",
    "InteractionType",
    "PRIORITY",
    "SliceConfig",
    "SliceContext",
    "StatsReport",
    "TimeFilterResult",
    "TrackSet",
    "classify_interaction",
    "conflict_filter",
    "merge_frames",
    "read_atoms",
    "search_neighbors",
    "segment_stats",
    "slice",
    "slice_all",
    "time_filter",
    "write_atoms",
]
