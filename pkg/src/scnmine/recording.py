"""A track set bound to its road map, with cached per-vehicle map matching."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

from ._geometry import angle_diff


class VehicleGeometry(NamedTuple):
    """Per-sample map-matched quantities of one track (same length as the track)."""

    lane: np.ndarray  # lane index into road_map.lane_ids
    in_corridor: np.ndarray  # within the matched lane's half width
    s: np.ndarray  # polyline arc position on the matched lane
    progress: np.ndarray  # distance travelled along the matched lane
    d: np.ndarray  # signed lateral offset from the matched centerline
    v_lat: np.ndarray  # velocity across the lane (m/s, signed, left positive)
    v_lon: np.ndarray  # velocity along the lane travel direction
    speed: np.ndarray
    heading: np.ndarray  # direction of motion (track heading when nearly stopped)
    lane_progress: np.ndarray  # (n_lanes, n) progress projected on every lane
    zone_in: np.ndarray  # (n_zones, n) membership
    zone_dist: np.ndarray  # (n_zones, n) Euclidean distance, 0 inside


@njit(cache=True)
def _match(dist, half, aligned, succ, hyst):
    n_lanes, n = dist.shape
    lane = np.empty(n, dtype=np.int64)
    prev = -1
    for t in range(n):
        if prev >= 0 and aligned[prev, t] and dist[prev, t] <= half[prev] + hyst:
            lane[t] = prev
            continue
        best = -1
        best_score = np.inf
        for k in range(n_lanes):
            if aligned[k, t] and dist[k, t] <= half[k]:
                score = dist[k, t]
                if prev >= 0 and succ[prev, k]:
                    score -= half[k]
                if score < best_score:
                    best_score = score
                    best = k
        if best < 0:
            # off-direction vehicle inside a corridor (head-on intrusion)
            for k in range(n_lanes):
                if dist[k, t] <= half[k] and dist[k, t] < best_score:
                    best_score = dist[k, t]
                    best = k
        if best < 0:
            for k in range(n_lanes):
                if aligned[k, t] and dist[k, t] < best_score:
                    best_score = dist[k, t]
                    best = k
        if best < 0:
            for k in range(n_lanes):
                if dist[k, t] < best_score:
                    best_score = dist[k, t]
                    best = k
        lane[t] = best
        prev = best
    return lane


class Recording:
    """Tracks plus road map; geometry is computed lazily per vehicle and cached."""

    def __init__(self, tracks, road_map, hysteresis=0.25):
        self.tracks = tracks
        self.road_map = road_map
        self.hysteresis = hysteresis
        self._geom = {}
        self._arc = {}
        self._conflicts = {}
        lanes = list(road_map.lanes.values())
        self._lanes = lanes
        self._half = np.array([ln.width / 2.0 for ln in lanes])
        idx = road_map.lane_index
        succ = np.zeros((len(lanes), len(lanes)), dtype=np.bool_)
        for ln in lanes:
            for s in ln.successors:
                succ[idx[ln.lane_id], idx[s]] = True
        self._succ = succ

    @property
    def dt(self):
        return self.tracks.dt

    def geometry(self, vid):
        g = self._geom.get(vid)
        if g is None:
            g = self._compute(self.tracks[vid])
            self._geom[vid] = g
        return g

    def _compute(self, tr):
        n = len(tr)
        lanes = self._lanes
        speed = np.hypot(tr.vx, tr.vy)
        move_heading = np.where(speed > 0.5, np.arctan2(tr.vy, tr.vx), tr.heading)
        nl = len(lanes)
        dist = np.empty((nl, n))
        aligned = np.empty((nl, n), dtype=np.bool_)
        proj = []
        lane_prog = np.empty((nl, n))
        for k, lane in enumerate(lanes):
            s, d, tx, ty = lane.centerline.project(tr.x, tr.y)
            px, py, _, _ = lane.centerline.interpolate(s)
            dist[k] = np.hypot(tr.x - px, tr.y - py)
            sign = lane.direction_sign
            lane_heading = np.arctan2(sign * ty, sign * tx)
            aligned[k] = angle_diff(move_heading, lane_heading) < np.pi / 2
            proj.append((s, d, tx * sign, ty * sign))
            lane_prog[k] = s if sign > 0 else lane.length - s
        if nl:
            lane_idx = _match(dist, self._half, aligned, self._succ, self.hysteresis)
        else:
            lane_idx = np.full(n, -1, dtype=np.int64)
        s = np.full(n, np.nan)
        d = np.full(n, np.nan)
        tx = np.full(n, np.nan)
        ty = np.full(n, np.nan)
        for k in range(nl):
            m = lane_idx == k
            if m.any():
                ps, pd_, ptx, pty = proj[k]
                s[m], d[m], tx[m], ty[m] = ps[m], pd_[m], ptx[m], pty[m]
        sign = np.array([ln.direction_sign for ln in lanes] or [1])[np.maximum(lane_idx, 0)]
        lengths = np.array([ln.length for ln in lanes] or [0.0])[np.maximum(lane_idx, 0)]
        progress = np.where(sign > 0, s, lengths - s)
        d = d * sign  # left of travel direction positive
        v_lon = tr.vx * tx + tr.vy * ty
        v_lat = tr.vy * tx - tr.vx * ty
        in_corr = np.zeros(n, dtype=bool)
        if nl:
            in_corr = dist[lane_idx, np.arange(n)] <= self._half[lane_idx]
        rm = self.road_map
        return VehicleGeometry(
            lane=lane_idx,
            in_corridor=in_corr,
            s=s,
            progress=progress,
            d=d,
            v_lat=v_lat,
            v_lon=v_lon,
            speed=speed,
            heading=move_heading,
            lane_progress=lane_prog,
            zone_in=rm.zone_membership(tr.x, tr.y),
            zone_dist=rm.zone_distance(tr.x, tr.y) if rm.conflict_zones else np.zeros((0, n)),
        )

    def path_arc(self, vid):
        """Cumulative distance travelled along the recorded path."""
        a = self._arc.get(vid)
        if a is None:
            tr = self.tracks[vid]
            a = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(tr.x), np.diff(tr.y)))])
            self._arc[vid] = a
        return a

    def conflict_arcs(self, ego_id, other_id, zone_id, merge_tol=1.0):
        """Path arcs of the pair's conflict point in a zone, or ``None`` if the paths never meet there."""
        from .errors import NoCommonConflict
        from .tree_metric import conflict_arcs

        key = (ego_id, other_id, zone_id)
        if key not in self._conflicts:
            zone = self.road_map.conflict_zones[self.road_map.zone_index[zone_id]]
            te, to = self.tracks[ego_id], self.tracks[other_id]
            try:
                self._conflicts[key] = conflict_arcs(np.column_stack([te.x, te.y]), np.column_stack([to.x, to.y]),
                                                     zone, merge_tol)
            except NoCommonConflict:
                self._conflicts[key] = None
        return self._conflicts[key]

    def virtual_dr(self, ego_id, other_id, zone_id, frame):
        """Signed virtual gap ``s_e - s_o`` at ``frame`` (bumper to bumper), ``None`` without a conflict point."""
        arcs = self.conflict_arcs(ego_id, other_id, zone_id)
        if arcs is None:
            return None
        te, to = self.tracks[ego_id], self.tracks[other_id]
        ie, io = te.index_of(frame), to.index_of(frame)
        if ie < 0 or io < 0:
            return None
        s_e = arcs[0] - self.path_arc(ego_id)[ie] - te.length / 2.0
        s_o = arcs[1] - self.path_arc(other_id)[io] + to.length / 2.0
        return float(s_e - s_o)

    def lane_id_at(self, vid, frame):
        tr = self.tracks[vid]
        i = tr.index_of(frame)
        if i < 0:
            return None
        k = self.geometry(vid).lane[i]
        return self.road_map.lane_ids[k] if k >= 0 else None
