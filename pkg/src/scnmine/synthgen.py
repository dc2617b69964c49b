"""Seeded synthetic track streams with known ground truth.

A ``ScriptSpec`` names a map template and a list of actors. Each actor drives
along a path (a lane and its successors, or an explicit route of lanes) and
its lifetime is tiled by phases:

``cruise``
    constant speed.
``accelerate``
    constant acceleration ``accel`` (m/s^2); speed never drops below 0.
``lane_change``
    sinusoidal lateral shift of ``offset`` meters (default one lane width to
    the ``direction`` side) over the phase duration, at constant speed.

Positions are evaluated analytically on the frame grid; velocities are the
forward differences of those positions, so ``x[k+1] = x[k] + vx[k] * dt``
holds to rounding. Position noise (if any) is added afterwards.

Ground truth is bookkeeping, never inferred from the tracks: builders declare
the interactions they script.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import shapely
from shapely.geometry import LineString
from shapely.ops import unary_union

from ._geometry import Polyline
from .errors import InvalidScript
from .ingest import Track, TrackSet, natural_key
from .roadmap import ConflictZone, Lane, RoadMap

TEMPLATES = ("straight_multilane", "ramp_merge", "four_way_intersection")
MANEUVERS = ("cruise", "accelerate", "lane_change")


@dataclass
class Phase:
    maneuver: str
    duration: float
    params: dict = field(default_factory=dict)


@dataclass
class ActorScript:
    """One scripted vehicle.

    ``lane`` is the starting lane, ``s0`` the start position along the path
    and ``start`` the appearance time in seconds. ``route`` (optional) lists
    the lanes to drive through; by default the first successor is followed.
    """

    vehicle_id: str
    lane: str
    s0: float
    speed: float
    phases: list
    start: float = 0.0
    route: list | None = None
    length: float = 4.5
    width: float = 1.8
    ego: bool = False


@dataclass
class ExpectedInteraction:
    """A scripted interaction, times in seconds from the stream start."""

    ego_id: str
    other_id: str
    itype: str
    start: float
    end: float
    zone_id: str | None = None


@dataclass
class ScriptSpec:
    seed: int
    template: str
    actors: list
    noise: float = 0.0
    dt: float = 0.04
    template_params: dict = field(default_factory=dict)
    expected: list = field(default_factory=list)
    planted: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    label: str = ""

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else dict(text)
        try:
            actors = [ActorScript(**{**a, "phases": [Phase(**p) for p in a["phases"]]}) for a in d.pop("actors")]
            expected = [ExpectedInteraction(**e) for e in d.pop("expected", [])]
            return cls(actors=actors, expected=expected, **d)
        except (TypeError, KeyError) as exc:
            raise InvalidScript(f"malformed script: {exc}") from None


@dataclass
class GTSegment:
    ego_id: str
    start_frame: int
    end_frame: int
    itype: str
    others: tuple


@dataclass
class GroundTruth:
    egos: list
    segments: list
    interactions: list
    planted: list
    counts: dict

    def boundaries(self, ego_id):
        """Frames where a new ground-truth segment starts (excluding the first)."""
        segs = [s for s in self.segments if s.ego_id == ego_id]
        return [s.start_frame for s in segs[1:]]

    def to_dict(self):
        return {
            "egos": list(self.egos),
            "segments": [asdict(s) for s in self.segments],
            "interactions": [asdict(e) for e in self.interactions],
            "planted": list(self.planted),
            "counts": dict(self.counts),
        }


# ---------------------------------------------------------------------------
# map templates
# ---------------------------------------------------------------------------

def straight_multilane(n_lanes=3, length=1000.0, width=3.5):
    """Parallel lanes along +x; lane "1" at y=0, lane k at y=(k-1)*width (k+1 is to its left)."""
    lanes = []
    for k in range(1, n_lanes + 1):
        y = (k - 1) * width
        lanes.append(Lane(
            lane_id=str(k),
            centerline=Polyline([[0.0, y], [length, y]]),
            left=str(k + 1) if k < n_lanes else None,
            right=str(k - 1) if k > 1 else None,
            width=width,
        ))
    return RoadMap(lanes, dt_hint=0.04)


def ramp_merge(length=600.0, merge_x=300.0, ramp_length=150.0, width=3.5):
    """Two-lane mainline with an on-ramp joining lane 1 at ``merge_x``.

    Lane 1 is split into "1a" (before the merge) and "1b" (after); the ramp
    "R" ends where "1b" starts. One static_line zone covers the ramp end and
    lane 1 around the merge point, but not lane 2.
    """
    w = width
    lanes = [
        Lane("1a", Polyline([[0.0, 0.0], [merge_x, 0.0]]), left="2", successors=("1b",), width=w),
        Lane("1b", Polyline([[merge_x, 0.0], [length, 0.0]]), left="2", width=w),
        Lane("2", Polyline([[0.0, w], [length, w]]), right="1a", width=w),
        Lane("R", Polyline([[merge_x - ramp_length, -2.5 * w], [merge_x - 50.0, -w], [merge_x, 0.0]]),
             successors=("1b",), type="ramp", width=w),
    ]
    zone = ConflictZone("M1", ((merge_x - 50.0, -1.6 * w), (merge_x + 10.0, -1.6 * w),
                               (merge_x + 10.0, 0.45 * w), (merge_x - 50.0, 0.45 * w)), "static_line")
    return RoadMap(lanes, [zone], dt_hint=0.04)


_ARMS = {  # unit vector pointing from the center outwards
    "W": (-1.0, 0.0),
    "S": (0.0, -1.0),
    "E": (1.0, 0.0),
    "N": (0.0, 1.0),
}


def _turn(a, b):
    order = ["W", "S", "E", "N"]  # counter-clockwise
    d = (order.index(b) - order.index(a)) % 4
    return {2: "straight", 1: "right", 3: "left"}[d]


def four_way_intersection(arm_length=100.0, width=3.5, zone_buffer=2.5, arc_points=16):
    """Four two-lane arms (right-hand traffic) joined by straight and quarter-circle connectors.

    Inbound lanes are "<arm>_in", outbound "<arm>_out", connectors
    "<from>_<to>". Static_point zones are the buffered crossing points of
    connectors from different arms.
    """
    w = width
    c = 2.0 * w  # half size of the junction box
    lanes = []
    ends_in, starts_out = {}, {}
    for arm, (ux, uy) in _ARMS.items():
        # inbound traffic keeps right, i.e. left of the outward vector
        px, py = -uy, ux  # left normal of the outward direction
        a_in = np.array([ux * (c + arm_length) + px * w / 2, uy * (c + arm_length) + py * w / 2])
        b_in = np.array([ux * c + px * w / 2, uy * c + py * w / 2])
        a_out = np.array([ux * c - px * w / 2, uy * c - py * w / 2])
        b_out = np.array([ux * (c + arm_length) - px * w / 2, uy * (c + arm_length) - py * w / 2])
        ends_in[arm] = b_in
        starts_out[arm] = a_out
        lanes.append(Lane(f"{arm}_in", Polyline([a_in, b_in]), type="intersection_approach", width=w,
                          successors=tuple(f"{arm}_{o}" for o in _ARMS if o != arm)))
        lanes.append(Lane(f"{arm}_out", Polyline([a_out, b_out]), width=w))
    connectors = []
    for a in _ARMS:
        for b in _ARMS:
            if a == b:
                continue
            p0, p1 = ends_in[a], starts_out[b]
            kind = _turn(a, b)
            if kind == "straight":
                pts = np.array([p0, p1])
            else:
                # quarter circle around the junction-box corner between the arms
                ua, ub = np.array(_ARMS[a]), np.array(_ARMS[b])
                center = c * (ua + ub)
                r = np.hypot(*(p0 - center))
                a0 = math.atan2(*(p0 - center)[::-1])
                a1 = math.atan2(*(p1 - center)[::-1])
                da = (a1 - a0 + math.pi) % (2 * math.pi) - math.pi
                ang = a0 + da * np.linspace(0.0, 1.0, arc_points)
                pts = center + r * np.column_stack([np.cos(ang), np.sin(ang)])
                pts[0], pts[-1] = p0, p1
            connectors.append((a, b, pts))
            lanes.append(Lane(f"{a}_{b}", Polyline(pts), type="intersection_approach", width=w,
                              successors=(f"{b}_out",)))
    crossings = []
    for i, (a1, _, p) in enumerate(connectors):
        for a2, _, q in connectors[i + 1:]:
            if a1 == a2:
                continue
            inter = LineString(p).intersection(LineString(q))
            if not inter.is_empty:
                crossings.extend(shapely.get_coordinates(inter).tolist())
    zones = []
    if crossings:
        blob = unary_union([shapely.Point(x, y).buffer(zone_buffer, quad_segs=4) for x, y in crossings])
        parts = list(getattr(blob, "geoms", [blob]))
        parts.sort(key=lambda g: (round(g.centroid.x, 6), round(g.centroid.y, 6)))
        for k, g in enumerate(parts, start=1):
            g = shapely.Polygon(g.exterior).simplify(0.05)
            coords = tuple((round(x, 6), round(y, 6)) for x, y in list(g.exterior.coords)[:-1])
            zones.append(ConflictZone(f"X{k}", coords, "static_point"))
    return RoadMap(lanes, zones, dt_hint=0.04)


def build_map(template, **params):
    if template == "straight_multilane":
        return straight_multilane(**params)
    if template == "ramp_merge":
        return ramp_merge(**params)
    if template == "four_way_intersection":
        return four_way_intersection(**params)
    raise InvalidScript(f"unknown map template {template!r}")


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def _path(road_map, actor):
    route = actor.route
    if route is None:
        route, seen = [actor.lane], {actor.lane}
        while road_map.lanes[route[-1]].successors:
            nxt = road_map.lanes[route[-1]].successors[0]
            if nxt in seen:
                break
            route.append(nxt)
            seen.add(nxt)
    for lid in route:
        if lid not in road_map.lanes:
            raise InvalidScript(f"actor {actor.vehicle_id}: unknown lane {lid!r}")
    if route[0] != actor.lane:
        raise InvalidScript(f"actor {actor.vehicle_id}: route must start at its lane")
    pts = []
    for lid in route:
        lane = road_map.lanes[lid]
        p = lane.centerline.points if lane.direction_sign > 0 else lane.centerline.points[::-1]
        pts.extend(p.tolist() if not pts else p[1:].tolist())
    return Polyline(pts)


def _profile(actor, n_samples, dt, lane_width):
    """Longitudinal position and lateral offset at ``n_samples`` grid times."""
    t = np.arange(n_samples) * dt
    s = np.empty(n_samples)
    d = np.zeros(n_samples)
    s_p, v_p, d_p, t_p = actor.s0, actor.speed, 0.0, 0.0
    for k, ph in enumerate(actor.phases):
        if ph.maneuver not in MANEUVERS:
            raise InvalidScript(f"actor {actor.vehicle_id}: unknown maneuver {ph.maneuver!r}")
        if ph.duration <= 0:
            raise InvalidScript(f"actor {actor.vehicle_id}: phase duration must be positive")
        last = k == len(actor.phases) - 1
        t_end = t_p + ph.duration
        m = (t >= t_p - 1e-9) & ((t < t_end - 1e-9) | last)
        tau = t[m] - t_p
        a = float(ph.params.get("accel", 0.0)) if ph.maneuver == "accelerate" else 0.0
        if a < 0 and v_p > 0:
            t_stop = v_p / -a
            tc = np.minimum(tau, t_stop)
            s[m] = s_p + v_p * tc + 0.5 * a * tc * tc
        else:
            s[m] = s_p + v_p * tau + 0.5 * a * tau * tau
        if ph.maneuver == "lane_change":
            off = ph.params.get("offset")
            if off is None:
                side = ph.params.get("direction", "left")
                if side not in ("left", "right"):
                    raise InvalidScript(f"actor {actor.vehicle_id}: lane_change direction must be left/right")
                off = lane_width if side == "left" else -lane_width
            frac = np.clip(tau / ph.duration, 0.0, 1.0)
            d[m] = d_p + float(off) * 0.5 * (1.0 - np.cos(math.pi * frac))
            d_end = d_p + float(off)
        else:
            d[m] = d_p
            d_end = d_p
        T = ph.duration
        if a < 0 and v_p > 0:
            tc = min(T, v_p / -a)
            s_p, v_p = s_p + v_p * tc + 0.5 * a * tc * tc, max(0.0, v_p + a * T)
        else:
            s_p, v_p = s_p + v_p * T + 0.5 * a * T * T, v_p + a * T
        d_p, t_p = d_end, t_end
    return s, d


def _lifetime(actor):
    return sum(p.duration for p in actor.phases)


def generate(spec):
    """Run a script.

    Returns
    -------
    (TrackSet, RoadMap, GroundTruth)

    Raises
    ------
    InvalidScript
        Unknown template, lane or maneuver; empty or non-positive phases;
        duplicate vehicle ids.
    """
    if spec.template not in TEMPLATES:
        raise InvalidScript(f"unknown map template {spec.template!r}")
    if spec.dt <= 0 or spec.noise < 0:
        raise InvalidScript("dt must be positive and noise non-negative")
    ids = [a.vehicle_id for a in spec.actors]
    if len(set(ids)) != len(ids):
        raise InvalidScript("duplicate vehicle ids")
    road_map = build_map(spec.template, **spec.template_params)
    rng = np.random.default_rng(spec.seed)
    dt = spec.dt
    tracks = {}
    for actor in sorted(spec.actors, key=lambda a: natural_key(a.vehicle_id)):
        if not actor.phases:
            raise InvalidScript(f"actor {actor.vehicle_id} has no phases")
        if actor.lane not in road_map.lanes:
            raise InvalidScript(f"actor {actor.vehicle_id}: unknown lane {actor.lane!r}")
        f0 = int(round(actor.start / dt))
        n = int(round(_lifetime(actor) / dt))
        if n < 2:
            raise InvalidScript(f"actor {actor.vehicle_id} lives for fewer than 2 frames")
        path = _path(road_map, actor)
        width = road_map.lanes[actor.lane].width
        s, d = _profile(actor, n + 1, dt, width)
        px, py, tx, ty = path.interpolate(s)
        x = px - ty * d
        y = py + tx * d
        vx = np.diff(x) / dt
        vy = np.diff(y) / dt
        x, y = x[:-1], y[:-1]
        speed = np.hypot(vx, vy)
        heading = np.arctan2(vy, vx)
        if (speed < 1e-9).any():
            # hold the last meaningful heading while stopped
            h_ok = speed >= 1e-9
            idx = np.where(h_ok, np.arange(n), 0)
            np.maximum.accumulate(idx, out=idx)
            heading = heading[idx]
        if spec.noise > 0:
            x = x + rng.normal(0.0, spec.noise, n)
            y = y + rng.normal(0.0, spec.noise, n)
        tracks[actor.vehicle_id] = Track(
            vehicle_id=actor.vehicle_id,
            length=float(actor.length),
            width=float(actor.width),
            frames=np.arange(f0, f0 + n, dtype=np.int64),
            x=x, y=y, vx=vx, vy=vy, heading=heading,
            lane=np.array([None] * n, dtype=object),
            dt=dt,
        )
    ts = TrackSet(dt=dt, tracks=tracks)
    return ts, road_map, _ground_truth(spec, ts)


def _ground_truth(spec, ts):
    dt = spec.dt
    egos = [a.vehicle_id for a in spec.actors if a.ego] or [spec.actors[0].vehicle_id]
    egos.sort(key=natural_key)
    segments = []
    for ego in egos:
        tr = ts[ego]
        f0, f1 = tr.first_frame, tr.last_frame
        n = f1 - f0 + 1
        sets = [set() for _ in range(n)]
        for e in spec.expected:
            if e.ego_id != ego:
                continue
            a = max(int(round(e.start / dt)), f0)
            b = min(int(round(e.end / dt)) - 1, f1)
            for f in range(a, b + 1):
                sets[f - f0].add((e.other_id, e.itype))
        start = 0
        for k in range(1, n + 1):
            if k == n or sets[k] != sets[start]:
                cur = sets[start]
                order = ["StaticConflictPoint", "StaticConflictLine", "HeadingLine", "DynamicConflictLine",
                         "FollowingLine"]
                itype = next((t for t in order if any(it == t for _, it in cur)), "FreeDriving")
                others = tuple(sorted({o for o, _ in cur}, key=natural_key))
                segments.append(GTSegment(ego, f0 + start, f0 + k - 1, itype, others))
                start = k
    return GroundTruth(egos=egos, segments=segments, interactions=list(spec.expected),
                       planted=list(spec.planted), counts=dict(spec.counts))


# ---------------------------------------------------------------------------
# scripted scenarios
# ---------------------------------------------------------------------------

def follow_script(seed=0, gap=30.0, speed=25.0, duration=10.0, noise=0.0):
    """Ego following a leader ``gap`` meters ahead in lane 1 at equal speed."""
    actors = [
        ActorScript("1", "1", 50.0, speed, [Phase("cruise", duration)], ego=True),
        ActorScript("2", "1", 50.0 + gap, speed, [Phase("cruise", duration)]),
    ]
    exp = [ExpectedInteraction("1", "2", "FollowingLine", 0.0, duration)]
    return ScriptSpec(seed, "straight_multilane", actors, noise=noise, expected=exp,
                      counts={"searched": 1, "interactive": 1, "non_interactive": 0}, label="follow")


def three_phase_script(seed=0, noise=0.0):
    """Follow -> cut-in conflict -> follow.

    The ego "1" follows "2" in lane 1 throughout. Vehicle "3" drives in
    lane 2, cuts into lane 1 between them over a sinusoidal manoeuvre and then
    stays there. Phase lengths, speeds and gaps vary with the seed. The
    conflict phase spans the instants the cutter's lateral speed crosses the
    default 0.2 m/s threshold.
    """
    rng = np.random.default_rng(seed)
    v = float(rng.uniform(20.0, 30.0))
    t1 = float(np.round(rng.uniform(6.0, 10.0), 1))
    T = float(np.round(rng.uniform(3.5, 5.0), 1))
    t3 = float(np.round(rng.uniform(6.0, 10.0), 1))
    total = t1 + T + t3
    gap2 = float(rng.uniform(55.0, 75.0))
    gap3 = float(rng.uniform(25.0, 35.0))
    v3 = v - float(rng.uniform(0.0, 0.5))
    width = 3.5
    s0 = 20.0
    ego = ActorScript("1", "1", s0, v, [Phase("cruise", total)], ego=True)
    lead = ActorScript("2", "1", s0 + gap2, v, [Phase("cruise", total)])
    cutter = ActorScript("3", "2", s0 + gap3, v3, [Phase("cruise", t1), Phase("lane_change", T, {"direction": "right"}),
                                                   Phase("cruise", t3)])
    # lateral speed (w*pi/2T) sin(pi tau/T) reaches the threshold at tau0
    peak = width * math.pi / (2 * T)
    tau0 = T / math.pi * math.asin(min(1.0, 0.2 / peak))
    lc0, lc1 = t1 + tau0, t1 + T - tau0
    exp = [
        ExpectedInteraction("1", "2", "FollowingLine", 0.0, total),
        ExpectedInteraction("1", "3", "DynamicConflictLine", lc0, lc1),
        ExpectedInteraction("1", "3", "FollowingLine", lc1, total),
    ]
    return ScriptSpec(seed, "straight_multilane", [ego, lead, cutter], noise=noise,
                      template_params={"n_lanes": 3, "length": s0 + gap2 + v * total + 100.0},
                      expected=exp, label="three_phase")


def merge_script(seed=0, n_main=3, noise=0.0):
    """``n_main`` lane-1 vehicles and one ramp vehicle converging on the merge zone.

    The ramp vehicle "R1" is the ego. Its interactions with the mainline
    vehicles near the merge point are static-line conflicts.
    """
    rng = np.random.default_rng(seed)
    v = 20.0
    merge_x, ramp_len = 300.0, 150.0
    duration = 10.0
    # ramp vehicle reaches the merge point at t_m
    t_m = 5.0 + float(rng.uniform(-0.5, 0.5))
    ramp_path_len = ramp_merge(merge_x=merge_x, ramp_length=ramp_len).lanes["R"].length
    actors = [ActorScript("R1", "R", ramp_path_len - v * t_m, v, [Phase("cruise", duration)], ego=True)]
    exp = []
    spacing = 28.0
    for k in range(n_main):
        # mainline vehicles staggered around the merge instant
        x0 = merge_x - v * t_m + (k - (n_main - 1) / 2) * spacing + float(rng.uniform(-2, 2))
        vid = f"M{k + 1}"
        actors.append(ActorScript(vid, "1a", x0, v, [Phase("cruise", duration)]))
        exp.append(ExpectedInteraction("R1", vid, "StaticConflictLine", 0.0, duration, "M1"))
    return ScriptSpec(seed, "ramp_merge", actors, noise=noise,
                      template_params={"merge_x": merge_x, "ramp_length": ramp_len},
                      expected=exp, label="merge")


def crossing_script(seed=0, noise=0.0):
    """Two vehicles crossing straight through the junction from W and S."""
    v = 10.0
    arm = 100.0
    w = 3.5
    c = 2 * w
    # both reach the center at t=6 s
    s_center = arm + c
    actors = [
        ActorScript("1", "W_in", s_center - v * 6.0, v, [Phase("cruise", 10.0)], route=["W_in", "W_E", "E_out"],
                    ego=True),
        ActorScript("2", "S_in", s_center - v * 6.0 - 3.0, v, [Phase("cruise", 10.0)],
                    route=["S_in", "S_N", "N_out"]),
    ]
    exp = [ExpectedInteraction("1", "2", "StaticConflictPoint", 0.0, 10.0)]
    return ScriptSpec(seed, "four_way_intersection", actors, noise=noise, expected=exp, label="crossing")


def filter_corpus(n_scenarios=20, seed=0, non_interactive_fraction=0.75):
    """Scenarios where an exact fraction of the searched actors never interact.

    Each scenario has an ego in lane 1 with ``k`` interactive vehicles in its
    lane (leader, optionally a follower) and ``3k`` parallel vehicles in
    lanes 2 and 3 that stay in the search box without ever changing lane.
    """
    if abs(non_interactive_fraction - 0.75) > 1e-12:
        ratio = non_interactive_fraction / (1.0 - non_interactive_fraction)
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidScript("fraction must give an integer non-interactive/interactive ratio")
    ratio = int(round(non_interactive_fraction / (1.0 - non_interactive_fraction)))
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_scenarios):
        v = float(rng.uniform(22.0, 28.0))
        dur = 12.0
        k = 1 + int(rng.integers(0, 2))
        actors = [ActorScript("1", "1", 200.0, v, [Phase("cruise", dur)], ego=True)]
        exp = [ExpectedInteraction("1", "2", "FollowingLine", 0.0, dur)]
        actors.append(ActorScript("2", "1", 200.0 + float(rng.uniform(25, 60)), v, [Phase("cruise", dur)]))
        if k == 2:
            actors.append(ActorScript("3", "1", 200.0 - float(rng.uniform(20, 40)), v, [Phase("cruise", dur)]))
            exp.append(ExpectedInteraction("1", "3", "FollowingLine", 0.0, dur))
        nid = len(actors) + 1
        for j in range(ratio * k):
            lane = "2" if j % 2 == 0 else "3"
            ds = float(rng.uniform(-35.0, 80.0))
            actors.append(ActorScript(str(nid), lane, 200.0 + ds, v + float(rng.uniform(-0.3, 0.3)),
                                      [Phase("cruise", dur)]))
            nid += 1
        specs.append(ScriptSpec(seed * 1000 + i, "straight_multilane", actors, expected=exp,
                                template_params={"n_lanes": 3, "length": 800.0},
                                counts={"searched": (ratio + 1) * k, "interactive": k,
                                        "non_interactive": ratio * k},
                                label="filter"))
    return specs


def _gap_for_ttc(dv, ttc, t_brake, t_dec, t0, t1, dt=0.01):
    """Initial bumper gap giving minimum TTC ``ttc`` over ``[t0, t1]``.

    The follower closes at ``dv`` and from ``t_brake`` sheds that speed
    difference linearly over ``t_dec``. TTC grows with the initial gap, so
    the gap is found by bisection.
    """
    t = np.arange(t0, t1 + dt / 2, dt)
    tau = np.clip(t - t_brake, 0.0, t_dec)
    closing = dv * (1.0 - tau / t_dec)
    closed = dv * np.minimum(t, t_brake) + dv * (tau - tau * tau / (2.0 * t_dec))
    ok = closing > 1e-9

    def min_ttc(g0):
        return float(np.min((g0 - closed[ok]) / closing[ok]))

    lo, hi = float(closed.max()), float(closed.max()) + dv * (ttc + 10.0)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if min_ttc(mid) < ttc:
            lo = mid
        else:
            hi = mid
    return hi


def cut_in_script(seed=0, kind="normal", noise=0.0):
    """Ego "E" in lane 1 behind leader "A"; vehicle "B" cuts in from lane 2.

    ``kind`` selects the variant:

    ``normal``
        highway speeds; A stays more than 50 m ahead of B.
    ``low_ttc``
        B cuts in clearly slower and the ego (with A) brakes late; the
        smallest ego-B TTC during the cut-in lies between 0.3 s and 0.8 s.
    ``right_of_way``
        low speed, all three vehicles at one speed (ego-centric TTC is
        infinite) and ego-relative gaps in the normal range of ``v / dr``,
        but B squeezes in nose to tail behind A.
    """
    rng = np.random.default_rng(seed)
    T = 4.0
    t_pre, t_post = 3.0, 3.0
    dur = t_pre + T + t_post
    length = 4.5
    peak = 3.5 * math.pi / (2 * T)
    tau0 = T / math.pi * math.asin(min(1.0, 0.2 / peak))  # lateral speed crosses 0.2 m/s
    e_phases = a_phases = [Phase("cruise", dur)]
    b_phases = [Phase("cruise", t_pre), Phase("lane_change", T, {"direction": "right"}), Phase("cruise", t_post)]
    if kind == "normal":
        v = float(rng.uniform(24.0, 27.0))
        vb = v + float(rng.uniform(-0.5, 0.5))
        va = v + float(rng.uniform(-0.3, 0.3))
        gap_b = float(rng.uniform(20.0, 32.0))
        gap_a = gap_b + float(rng.uniform(56.0, 70.0))
    elif kind == "low_ttc":
        v = float(rng.uniform(24.0, 27.0))
        dv = float(rng.uniform(5.0, 10.0))
        ttc = float(rng.uniform(0.3, 0.8))
        vb = v - dv
        va = v
        t_brake, t_dec = t_pre + 2.0, 2.5
        gap_b = length + _gap_for_ttc(dv, ttc, t_brake, t_dec, t_pre + tau0, t_pre + T - tau0)
        gap_a = gap_b + float(rng.uniform(56.0, 70.0))
        e_phases = [Phase("cruise", t_brake), Phase("accelerate", t_dec, {"accel": -dv / t_dec}),
                    Phase("cruise", dur - t_brake - t_dec)]
        a_phases = e_phases
    elif kind == "right_of_way":
        v = float(rng.uniform(3.0, 9.0))
        vb = va = v
        gap_b = max(v / float(rng.uniform(0.8, 1.2)), length + 1.5)
        gap_a = gap_b + length + float(rng.uniform(0.5, 1.5))
    else:
        raise InvalidScript(f"unknown cut-in variant {kind!r}")
    s_e = 100.0
    ego = ActorScript("E", "1", s_e, v, e_phases, ego=True, length=length)
    a = ActorScript("A", "1", s_e + gap_a, va, a_phases, length=length)
    b = ActorScript("B", "2", s_e + gap_b, vb, b_phases, length=length)
    exp = [
        ExpectedInteraction("E", "A", "FollowingLine", 0.0, dur),
        ExpectedInteraction("E", "B", "DynamicConflictLine", t_pre + tau0, t_pre + T - tau0),
    ]
    planted = ["E"] if kind != "normal" else []
    return ScriptSpec(seed, "straight_multilane", [ego, a, b], noise=noise, expected=exp, planted=planted,
                      template_params={"n_lanes": 3, "length": 600.0}, label=kind)


def risk_corpus(n_normal=50, n_low_ttc=5, n_right_of_way=5, seed=0):
    """Cut-in corpus with planted risky variants; returns ``(specs, kinds)``."""
    kinds = ["normal"] * n_normal + ["low_ttc"] * n_low_ttc + ["right_of_way"] * n_right_of_way
    specs = [cut_in_script(seed * 10000 + i, kind) for i, kind in enumerate(kinds)]
    return specs, kinds


def stream_script(n_vehicles=30, n_frames=10000, seed=0, dt=0.04, n_lanes=3):
    """Long multi-lane stream for throughput checks; a few vehicles change lanes periodically."""
    rng = np.random.default_rng(seed)
    duration = n_frames * dt
    v = 25.0
    per_lane = int(math.ceil(n_vehicles / n_lanes))
    actors = []
    for k in range(n_vehicles):
        lane = k % n_lanes + 1
        slot = k // n_lanes
        s0 = 200.0 + slot * (600.0 / per_lane) + float(rng.uniform(-5, 5))
        vk = v + float(rng.uniform(-0.2, 0.2))
        if k % 7 == 3 and lane < n_lanes:
            # periodic left-right weaving every 40 s
            phases, t = [], 0.0
            while t < duration - 1e-9:
                step = min(18.0, duration - t)
                phases.append(Phase("cruise", step))
                t += step
                for side in ("left", "right"):
                    if t + 4.0 <= duration - 1e-9:
                        phases.append(Phase("lane_change", 4.0, {"direction": side}))
                        t += 4.0
                        if side == "left":
                            extra = min(10.0, duration - t)
                            if extra > 0:
                                phases.append(Phase("cruise", extra))
                                t += extra
            # absorb rounding in the final phase
            total = sum(p.duration for p in phases)
            phases[-1].duration += duration - total
        else:
            phases = [Phase("cruise", duration)]
        actors.append(ActorScript(str(k + 1), str(lane), s0, vk, phases))
    length = 200.0 + 700.0 + (v + 0.5) * duration + 200.0
    return ScriptSpec(seed, "straight_multilane", actors, dt=dt,
                      template_params={"n_lanes": n_lanes, "length": length}, label="stream")


def concat_specs(specs, pause=2.0, label="corpus"):
    """Lay several scripts on one map one after another in time.

    Vehicle ids become ``"<k>_<id>"`` for script ``k``; script ``k`` starts
    ``pause`` seconds after the last vehicle of script ``k - 1`` has left.
    All scripts must share the map template, its parameters, ``dt`` and the
    noise level.
    """
    if not specs:
        raise InvalidScript("empty corpus")
    ref = specs[0]
    actors, expected, planted, counts = [], [], [], {}
    offset = 0.0
    for k, sp in enumerate(specs):
        if (sp.template, sp.template_params, sp.dt, sp.noise) != (ref.template, ref.template_params, ref.dt, ref.noise):
            raise InvalidScript(f"script {k} uses a different map, dt or noise level")
        ren = {a.vehicle_id: f"{k}_{a.vehicle_id}" for a in sp.actors}
        for a in sp.actors:
            actors.append(ActorScript(ren[a.vehicle_id], a.lane, a.s0, a.speed,
                                      [Phase(p.maneuver, p.duration, dict(p.params)) for p in a.phases],
                                      start=a.start + offset, route=a.route, length=a.length, width=a.width,
                                      ego=a.ego))
        for e in sp.expected:
            expected.append(ExpectedInteraction(ren[e.ego_id], ren[e.other_id], e.itype, e.start + offset,
                                                e.end + offset, e.zone_id))
        planted += [ren[p] for p in sp.planted]
        for key, v in sp.counts.items():
            counts[key] = counts.get(key, 0) + v
        end = max(a.start + _lifetime(a) for a in sp.actors)
        # align to the frame grid so every script starts on a whole frame
        offset = math.ceil((offset + end + pause) / ref.dt - 1e-9) * ref.dt
    return ScriptSpec(ref.seed, ref.template, actors, noise=ref.noise, dt=ref.dt,
                      template_params=dict(ref.template_params), expected=expected, planted=planted,
                      counts=counts, label=label)
