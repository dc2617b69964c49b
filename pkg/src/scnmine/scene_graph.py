"""Per-frame attributed scene graphs and their computation trees.

A scene graph holds the ego, the atom's interactive vehicles and the road
nodes they sit on or approach. Vehicle-vehicle edges come from the atom's
interaction records (ego to other) and from lane geometry (other to other);
vehicle-road edges are ``on`` (nearest node of the vehicle's lane) and
``approaching`` (next node ahead within range).

``expand_tree`` unrolls the graph breadth-first from the ego into a rooted
tree of fixed depth. A V2V tree follows vehicle-vehicle edges only; a V2N
tree alternates vehicle and road levels. Children are ordered by node id and
a node's parent is never among its children.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FrameOutOfSpan
from .ingest import natural_key
from .recording import Recording
from .slicing import InteractionType
from .tree_metric import MetricConfig, ZERO_FEATURE, _risk, node_feature, road_feature

FOLLOW_RANGE = 50.0
ADJACENT_RANGE = 30.0
APPROACH_RANGE = 30.0


class VehicleState(NamedTuple):
    vehicle_id: str
    x: float
    y: float
    vx: float
    vy: float
    speed: float
    lane_id: str | None
    progress: float
    length: float


class RoadNodeState(NamedTuple):
    node_id: str
    x: float
    y: float
    lane_id: str
    node_type: int


class Edge(NamedTuple):
    a: str  # node reference ("v:<id>" or "n:<id>")
    b: str
    kind: str  # "V2V" or "V2N"
    relation: str  # following | conflict | adjacent | on | approaching
    dr: float  # distance used by node features (virtual gap for static conflicts)


def vref(vid):
    return f"v:{vid}"


def nref(node_id):
    return f"n:{node_id}"


@dataclass
class SceneGraph:
    frame: int
    ego_id: str
    vehicles: dict  # vehicle id -> VehicleState (ego included)
    road_nodes: dict  # node id -> RoadNodeState
    edges: list
    _adj: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        adj = {}
        for e in self.edges:
            adj.setdefault((e.a, e.kind), []).append((e.b, e))
            adj.setdefault((e.b, e.kind), []).append((e.a, e))
        for v in adj.values():
            if len(v) > 1:
                v.sort(key=lambda t: natural_key(t[0]))
        self._adj = adj

    @property
    def ego(self):
        return self.vehicles[self.ego_id]

    def neighbors(self, ref, kind):
        """``[(ref, Edge)]`` sorted by node id."""
        return self._adj.get((ref, kind), [])

    def edge_dr(self, a_ref, b_ref):
        """Feature distance between two vehicles: the V2V edge's if any, else Euclidean."""
        for r, e in self.neighbors(a_ref, "V2V"):
            if r == b_ref:
                return e.dr
        va, vb = self.vehicles[a_ref[2:]], self.vehicles[b_ref[2:]]
        return math.hypot(va.x - vb.x, va.y - vb.y)

    def to_dot(self):
        lines = [f'graph "scene_{self.frame}" {{']
        for vid in sorted(self.vehicles, key=natural_key):
            shape = "doublecircle" if vid == self.ego_id else "circle"
            lines.append(f'  "{vref(vid)}" [shape={shape}, label="{vid}"];')
        for nid in sorted(self.road_nodes, key=natural_key):
            lines.append(f'  "{nref(nid)}" [shape=box, label="{nid}"];')
        for e in self.edges:
            style = "solid" if e.kind == "V2V" else "dashed"
            lines.append(f'  "{e.a}" -- "{e.b}" [label="{e.relation}", style={style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

_RECORDING_CACHE = {}


def _recording(atom, ts, road_map):
    if isinstance(ts, Recording):
        return ts
    if ts is None:
        if atom.source is None:
            raise ValueError("atom has no attached source; pass the track set and road map")
        return atom.source
    if atom.source is not None and atom.source.tracks is ts and atom.source.road_map is road_map:
        return atom.source
    key = (id(ts), id(road_map))
    rec = _RECORDING_CACHE.get(key)
    if rec is None or rec.tracks is not ts or rec.road_map is not road_map:
        _RECORDING_CACHE.clear()
        rec = Recording(ts, road_map)
        _RECORDING_CACHE[key] = rec
    return rec


class _Series(NamedTuple):
    """Per-frame samples of one vehicle over the requested frames (``valid`` marks presence)."""

    valid: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    speed: np.ndarray
    lane: np.ndarray
    progress: np.ndarray
    idx: np.ndarray


def _series(rec, vid, frames):
    tr = rec.tracks[vid]
    g = rec.geometry(vid)
    idx = frames - tr.first_frame
    valid = (idx >= 0) & (idx < len(tr))
    i = np.clip(idx, 0, len(tr) - 1)
    valid &= tr.frames[i] == frames
    return _Series(valid, tr.x[i], tr.y[i], tr.vx[i], tr.vy[i], g.speed[i], g.lane[i], g.progress[i], i)


class _LaneNodes(NamedTuple):
    nodes: list
    progress: np.ndarray  # ascending
    order: np.ndarray


def _lane_nodes(road_map, lane_id, cache):
    ln = cache.get(lane_id)
    if ln is None:
        lane = road_map.lanes[lane_id]
        nodes = road_map.nodes_by_lane[lane_id]
        arcs = road_map.node_arcs(lane_id) if nodes else np.zeros(0)
        prog = np.asarray(arcs if lane.direction_sign > 0 else lane.length - arcs, dtype=float)
        order = np.argsort(prog, kind="stable")
        ln = _LaneNodes([nodes[k] for k in order], prog[order], order)
        cache[lane_id] = ln
    return ln


def _road_attachments(ln, progress):
    """Node indices per sample: nearest node of the lane (``on``) and next node ahead within range.

    ``approaching`` is -1 where there is none.
    """
    p = ln.progress
    progress = np.asarray(progress, dtype=float)
    k = np.searchsorted(p, progress, side="right")  # first node strictly ahead
    lo = np.clip(k - 1, 0, len(p) - 1)
    hi = np.clip(k, 0, len(p) - 1)
    on = np.where(np.abs(p[hi] - progress) < np.abs(progress - p[lo]), hi, lo)
    nxt = np.where(k == on, k + 1, k)
    ok = nxt < len(p)
    nxt_c = np.minimum(nxt, len(p) - 1)
    ok &= (nxt_c != on) & (p[nxt_c] - progress <= APPROACH_RANGE)
    return on, np.where(ok, nxt_c, -1)


def _static_dr(rec, atom, oid, zone_id, se, so):
    """Absolute virtual gap per frame (NaN where undefined)."""
    arcs = rec.conflict_arcs(atom.ego_id, oid, zone_id)
    if arcs is None:
        return np.full(len(se.idx), np.nan)
    te, to = rec.tracks[atom.ego_id], rec.tracks[oid]
    s_e = arcs[0] - rec.path_arc(atom.ego_id)[se.idx] - te.length / 2.0
    s_o = arcs[1] - rec.path_arc(oid)[so.idx] + to.length / 2.0
    return np.abs(s_e - s_o)


def build_scenes(atom, ts=None, road_map=None, frames=None):
    """Scene graphs of ``atom`` at ``frames`` (default: every frame of the span).

    ``ts`` may be a ``TrackSet`` (then ``road_map`` is required), a
    ``Recording``, or ``None`` to use the atom's attached source.

    Raises
    ------
    FrameOutOfSpan
        A frame lies outside the atom span or the ego is absent there.
    """
    frames = np.asarray(list(atom.frames) if frames is None else frames, dtype=np.int64).reshape(-1)
    bad = (frames < atom.start_frame) | (frames > atom.end_frame)
    if bad.any():
        raise FrameOutOfSpan(f"frame {int(frames[bad][0])} outside span {atom.span}")
    rec = _recording(atom, ts, road_map)
    rm = rec.road_map
    lane_ids = rm.lane_ids
    ego_id = atom.ego_id
    ser = {ego_id: _series(rec, ego_id, frames)}
    if not ser[ego_id].valid.all():
        f = int(frames[~ser[ego_id].valid][0])
        raise FrameOutOfSpan(f"ego {ego_id} has no sample at frame {f}")
    rel = {}
    for r in atom.records:
        if r.other_id != ego_id and r.other_id in rec.tracks:
            rel[r.other_id] = r
            ser[r.other_id] = _series(rec, r.other_id, frames)
    others = sorted(rel, key=natural_key)
    ego_dr = {}
    for oid in others:
        r = rel[oid]
        e, o = ser[ego_id], ser[oid]
        dr = np.hypot(o.x - e.x, o.y - e.y)
        if r.itype.is_static and r.zone_id is not None:
            vd = _static_dr(rec, atom, oid, r.zone_id, e, o)
            dr = np.where(np.isnan(vd), dr, vd)
        ego_dr[oid] = dr
    order = [ego_id] + others
    cols = {vid: {k: getattr(s, k).tolist() for k in ("valid", "x", "y", "vx", "vy", "speed", "lane", "progress")}
            for vid, s in ser.items()}
    lengths = {vid: float(rec.tracks[vid].length) for vid in order}
    node_cache = {}
    attach = {}
    for vid in order:
        s = ser[vid]
        on = np.full(len(frames), -1)
        app = np.full(len(frames), -1)
        for k in np.unique(s.lane[s.valid & (s.lane >= 0)]):
            ln = _lane_nodes(rm, lane_ids[k], node_cache)
            if not ln.nodes:
                continue
            m = s.valid & (s.lane == k)
            on[m], app[m] = _road_attachments(ln, s.progress[m])
        attach[vid] = (on.tolist(), app.tolist())
    out = []
    for t, frame in enumerate(frames.tolist()):
        vehicles = {}
        for vid in order:
            c = cols[vid]
            if not c["valid"][t]:
                continue
            k = c["lane"][t]
            vehicles[vid] = VehicleState(vid, c["x"][t], c["y"][t], c["vx"][t], c["vy"][t], c["speed"][t],
                                         lane_ids[k] if k >= 0 else None, c["progress"][t], lengths[vid])
        present = [oid for oid in others if oid in vehicles]
        edges = []
        for oid in present:
            relation = "following" if rel[oid].itype == InteractionType.FollowingLine else "conflict"
            edges.append(Edge(vref(ego_id), vref(oid), "V2V", relation, float(ego_dr[oid][t])))
        for i, a in enumerate(present):
            va = vehicles[a]
            if va.lane_id is None:
                continue
            for b in present[i + 1:]:
                vb = vehicles[b]
                if vb.lane_id is None:
                    continue
                d = math.hypot(va.x - vb.x, va.y - vb.y)
                if rm.linked(va.lane_id, vb.lane_id):
                    if d <= FOLLOW_RANGE:
                        edges.append(Edge(vref(a), vref(b), "V2V", "following", d))
                elif vb.lane_id in rm.neighbors(va.lane_id) and d <= ADJACENT_RANGE:
                    edges.append(Edge(vref(a), vref(b), "V2V", "adjacent", d))
        road_nodes = {}
        for vid in order:
            v = vehicles.get(vid)
            if v is None or v.lane_id is None:
                continue
            on, app = attach[vid]
            if on[t] < 0:
                continue
            nodes = node_cache[v.lane_id].nodes
            for j, relation in ((on[t], "on"), (app[t], "approaching")):
                if j < 0:
                    continue
                node = nodes[j]
                px, py = node.position
                road_nodes[node.node_id] = RoadNodeState(node.node_id, px, py, node.lane_id, node.node_type)
                edges.append(Edge(vref(vid), nref(node.node_id), "V2N", relation, math.hypot(px - v.x, py - v.y)))
        out.append(SceneGraph(frame=int(frame), ego_id=ego_id, vehicles=vehicles, road_nodes=road_nodes, edges=edges))
    return out


def build_scene(atom, ts=None, road_map=None, frame=None):
    """Scene graph of ``atom`` at ``frame``; see ``build_scenes``.

    Raises
    ------
    FrameOutOfSpan
        ``frame`` lies outside the atom span.
    """
    if frame is None:
        raise FrameOutOfSpan("no frame given")
    return build_scenes(atom, ts, road_map, [frame])[0]


# ---------------------------------------------------------------------------
# computation trees
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    ref: str | None
    feature: np.ndarray
    children: list = field(default_factory=list)
    is_blank: bool = False
    node_kind: str = "vehicle"  # vehicle | road | blank

    @classmethod
    def blank(cls):
        return cls(None, ZERO_FEATURE.copy(), [], True, "blank")


@dataclass
class ComputationTree:
    kind: str
    root: TreeNode
    levels: int

    def level(self, l):
        """Nodes at level ``l`` (root is level 1), breadth-first order."""
        cur = [self.root]
        for _ in range(l - 1):
            cur = [c for n in cur for c in n.children]
        return cur

    @property
    def node_count(self):
        return sum(len(self.level(l)) for l in range(1, self.levels + 1))

    def to_dot(self):
        lines = [f'digraph "{self.kind}_tree" {{']
        counter = [0]

        def visit(node):
            name = f"t{counter[0]}"
            counter[0] += 1
            f = ", ".join(f"{x:.3g}" for x in node.feature)
            label = "blank" if node.is_blank else f"{node.ref}\\n({f})"
            shape = "box" if node.node_kind == "road" else "ellipse"
            lines.append(f'  {name} [label="{label}", shape={shape}];')
            for c in node.children:
                child = visit(c)
                lines.append(f"  {name} -> {child};")
            return name

        visit(self.root)
        lines.append("}")
        return "\n".join(lines) + "\n"


def expand_tree(g, kind, L, cfg=None):
    """Unroll ``g`` from the ego into a ``kind`` ("V2V" or "V2N") tree with ``L`` levels.

    Vehicle features are risk features relative to the nearest vehicle
    ancestor; road features use the distance to the parent vehicle.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if kind not in ("V2V", "V2N"):
        raise ValueError(f"unknown tree kind {kind!r}")
    cfg = cfg or MetricConfig()
    root = TreeNode(vref(g.ego_id), ZERO_FEATURE.copy(), [], False, "vehicle")
    # frontier entries: (node, parent ref, nearest vehicle ancestor ref)
    frontier = [(root, None, None)]
    for level in range(2, L + 1):
        nxt = []
        for node, parent, vanc in frontier:
            if node.node_kind == "vehicle":
                if kind == "V2V":
                    for ref, e in g.neighbors(node.ref, "V2V"):
                        if ref == parent:
                            continue
                        v = g.vehicles[ref[2:]]
                        u = g.vehicles[node.ref[2:]]
                        child = TreeNode(ref, node_feature(v.speed, u.speed, e.dr, cfg), [], False, "vehicle")
                        node.children.append(child)
                        nxt.append((child, node.ref, node.ref))
                else:
                    for ref, e in g.neighbors(node.ref, "V2N"):
                        if ref == parent:
                            continue
                        rn = g.road_nodes[ref[2:]]
                        child = TreeNode(ref, road_feature(e.dr, rn.node_type, cfg), [], False, "road")
                        node.children.append(child)
                        nxt.append((child, node.ref, node.ref))
            else:  # road node: its vehicles
                for ref, e in g.neighbors(node.ref, "V2N"):
                    if ref == parent:
                        continue
                    v = g.vehicles[ref[2:]]
                    u = g.vehicles[vanc[2:]]
                    dr = g.edge_dr(vanc, ref)
                    child = TreeNode(ref, node_feature(v.speed, u.speed, dr, cfg), [], False, "vehicle")
                    node.children.append(child)
                    nxt.append((child, node.ref, ref))
        frontier = nxt
    return ComputationTree(kind=kind, root=root, levels=L)


def pad_blank(children_a, children_b):
    """Extend both child lists with blank nodes to the larger size (inputs untouched)."""
    a, b = list(children_a), list(children_b)
    n = max(len(a), len(b))
    a += [TreeNode.blank() for _ in range(n - len(a))]
    b += [TreeNode.blank() for _ in range(n - len(b))]
    return a, b


def write_dot(obj, path):
    """Write a scene graph or computation tree as DOT text."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(obj.to_dot())


def flat_expansion(g, kind, L, cfg=None):
    """Breadth-first arrays of ``expand_tree(g, kind, L, cfg)`` without building nodes.

    Returns ``(features, first, nchild, depth)`` as lists in the layout of
    ``tree_metric.flatten_tree``; ``first`` is relative to the tree root.
    """
    cfg = cfg or MetricConfig()
    dr_min = cfg.dr_min
    v2v = kind == "V2V"
    root = vref(g.ego_id)
    # queue entries: (ref, parent ref, nearest vehicle ancestor ref, is_road)
    queue = [(root, None, None, False)]
    feats = [(0.0, 0.0, 0.0)]
    depth = [1]
    first = []
    nchild = []
    k = 0
    while k < len(queue):
        ref, parent, vanc, is_road = queue[k]
        d = depth[k]
        first.append(len(queue))
        n0 = len(queue)
        if d < L:
            if not is_road:
                u = g.vehicles[ref[2:]].speed
                for cref, e in g.neighbors(ref, kind):
                    if cref == parent:
                        continue
                    if v2v:
                        feats.append(_risk(g.vehicles[cref[2:]].speed, u, e.dr, dr_min))
                        queue.append((cref, ref, ref, False))
                    else:
                        rn = g.road_nodes[cref[2:]]
                        feats.append((1.0 / max(e.dr, dr_min), float(rn.node_type), 0.0))
                        queue.append((cref, ref, ref, True))
                    depth.append(d + 1)
            else:
                u = g.vehicles[vanc[2:]].speed
                for cref, e in g.neighbors(ref, "V2N"):
                    if cref == parent:
                        continue
                    feats.append(_risk(g.vehicles[cref[2:]].speed, u, g.edge_dr(vanc, cref), dr_min))
                    queue.append((cref, ref, cref, False))
                    depth.append(d + 1)
        nchild.append(len(queue) - n0)
        k += 1
    return feats, first, nchild, depth
