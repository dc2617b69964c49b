"""Road map model: lanes, topology, static conflict zones and sampled road nodes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import shapely
from shapely.geometry import Polygon

from ._geometry import Polyline
from .errors import DanglingReference, SchemaError

LANE_TYPES = ("normal", "ramp", "intersection_approach")
ZONE_KINDS = ("static_line", "static_point")

# integer codes used as the road-node "type" feature
NODE_TYPE_CODES = {
    "normal": 0,
    "ramp": 1,
    "intersection_approach": 2,
    "static_line": 3,
    "static_point": 4,
}

DEFAULT_LANE_WIDTH = 3.5
DEFAULT_NODE_INTERVAL = 10.0


@dataclass(frozen=True)
class Lane:
    lane_id: str
    centerline: Polyline = field(compare=False)
    direction_sign: int = 1
    left: str | None = None
    right: str | None = None
    successors: tuple[str, ...] = ()
    type: str = "normal"
    width: float = DEFAULT_LANE_WIDTH

    @property
    def length(self):
        return self.centerline.length

    def progress(self, s):
        """Distance travelled along the lane for polyline arc position ``s``."""
        return s if self.direction_sign > 0 else self.length - s


@dataclass(frozen=True)
class ConflictZone:
    zone_id: str
    polygon: tuple[tuple[float, float], ...]
    kind: str

    @cached_property
    def shape(self):
        return Polygon(self.polygon)


@dataclass(frozen=True)
class RoadNode:
    node_id: str
    position: tuple[float, float]
    lane_id: str
    arc_position: float
    node_type: int


class RoadMap:
    """Validated road map.

    Lanes keep the order of the source document; lane indices used by the
    slicing arrays refer to that order.
    """

    def __init__(self, lanes, conflict_zones=(), road_nodes=None, dt_hint=None,
                 node_interval=DEFAULT_NODE_INTERVAL):
        self.lanes = {lane.lane_id: lane for lane in lanes}
        if len(self.lanes) != len(lanes):
            raise SchemaError("lanes", "duplicate lane_id")
        self.conflict_zones = list(conflict_zones)
        if len({z.zone_id for z in self.conflict_zones}) != len(self.conflict_zones):
            raise SchemaError("conflict_zones", "duplicate zone_id")
        self.dt_hint = dt_hint
        self.node_interval = float(node_interval)
        self._check_references()
        if road_nodes is None:
            road_nodes = sample_road_nodes(self.lanes.values(), self.conflict_zones, self.node_interval)
        self.road_nodes = list(road_nodes)
        for node in self.road_nodes:
            if node.lane_id not in self.lanes:
                raise DanglingReference(node.lane_id)

    def _check_references(self):
        for lane in self.lanes.values():
            for ref in (lane.left, lane.right, *lane.successors):
                if ref is not None and ref not in self.lanes:
                    raise DanglingReference(ref)

    # -- lookups ---------------------------------------------------------
    @cached_property
    def lane_ids(self):
        return list(self.lanes)

    @cached_property
    def lane_index(self):
        return {lid: i for i, lid in enumerate(self.lanes)}

    @cached_property
    def zone_index(self):
        return {z.zone_id: i for i, z in enumerate(self.conflict_zones)}

    @cached_property
    def predecessors(self):
        pred = {lid: [] for lid in self.lanes}
        for lane in self.lanes.values():
            for succ in lane.successors:
                pred[succ].append(lane.lane_id)
        return {k: tuple(v) for k, v in pred.items()}

    @cached_property
    def nodes_by_lane(self):
        """Road nodes per lane, sorted by arc position."""
        out = {lid: [] for lid in self.lanes}
        for node in self.road_nodes:
            out[node.lane_id].append(node)
        for nodes in out.values():
            nodes.sort(key=lambda n: n.arc_position)
        return out

    @cached_property
    def _node_arcs(self):
        return {lid: np.array([n.arc_position for n in nodes]) for lid, nodes in self.nodes_by_lane.items()}

    def node_arcs(self, lane_id):
        return self._node_arcs[lane_id]

    def neighbors(self, lane_id):
        lane = self.lanes[lane_id]
        return tuple(x for x in (lane.left, lane.right) if x is not None)

    def linked(self, a, b):
        """True when lanes ``a`` and ``b`` are equal or directly chained."""
        return a == b or b in self.lanes[a].successors or a in self.lanes[b].successors

    def zone_membership(self, x, y):
        """Boolean array (n_zones, n_points): point inside each zone polygon."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros((len(self.conflict_zones), x.size), dtype=bool)
        for k, zone in enumerate(self.conflict_zones):
            out[k] = shapely.contains_xy(zone.shape, x, y)
        return out

    def zone_distance(self, x, y):
        """Euclidean distance (n_zones, n_points) from points to each zone (0 inside)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        pts = shapely.points(x, y)
        out = np.zeros((len(self.conflict_zones), x.size))
        for k, zone in enumerate(self.conflict_zones):
            out[k] = shapely.distance(zone.shape, pts)
        return out

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        return {
            "dt_hint": self.dt_hint,
            "node_interval": self.node_interval,
            "lanes": [
                {
                    "lane_id": lane.lane_id,
                    "centerline": lane.centerline.points.tolist(),
                    "direction_sign": lane.direction_sign,
                    "left": lane.left,
                    "right": lane.right,
                    "successors": list(lane.successors),
                    "type": lane.type,
                    "width": lane.width,
                }
                for lane in self.lanes.values()
            ],
            "conflict_zones": [
                {"zone_id": z.zone_id, "polygon": [list(p) for p in z.polygon], "kind": z.kind}
                for z in self.conflict_zones
            ],
            "road_nodes": [
                {
                    "node_id": n.node_id,
                    "position": list(n.position),
                    "lane_id": n.lane_id,
                    "arc_position": n.arc_position,
                    "node_type": n.node_type,
                }
                for n in self.road_nodes
            ],
        }

    @classmethod
    def from_dict(cls, doc, node_interval=None):
        _validate_schema(doc)
        lanes = []
        for i, item in enumerate(doc["lanes"]):
            try:
                line = Polyline(item["centerline"])
            except ValueError as exc:
                raise SchemaError(f"lanes/{i}/centerline", str(exc)) from None
            lanes.append(Lane(
                lane_id=item["lane_id"],
                centerline=line,
                direction_sign=int(item.get("direction_sign", 1)),
                left=item.get("left"),
                right=item.get("right"),
                successors=tuple(item.get("successors", ())),
                type=item.get("type", "normal"),
                width=float(item.get("width", DEFAULT_LANE_WIDTH)),
            ))
        zones = []
        for i, item in enumerate(doc.get("conflict_zones", [])):
            zone = ConflictZone(
                zone_id=item["zone_id"],
                polygon=tuple((float(p[0]), float(p[1])) for p in item["polygon"]),
                kind=item["kind"],
            )
            ring = shapely.LinearRing(zone.polygon)
            if not ring.is_simple or not zone.shape.is_valid or zone.shape.area <= 0.0:
                raise SchemaError(f"conflict_zones/{i}/polygon", "polygon is not simple")
            zones.append(zone)
        nodes = None
        if "road_nodes" in doc:
            nodes = [
                RoadNode(
                    node_id=n["node_id"],
                    position=(float(n["position"][0]), float(n["position"][1])),
                    lane_id=n["lane_id"],
                    arc_position=float(n["arc_position"]),
                    node_type=int(n["node_type"]),
                )
                for n in doc["road_nodes"]
            ]
        interval = node_interval if node_interval is not None else doc.get("node_interval", DEFAULT_NODE_INTERVAL)
        return cls(lanes, zones, nodes, dt_hint=doc.get("dt_hint"), node_interval=interval)


def sample_road_nodes(lanes, zones, interval):
    """Place road nodes along every centerline at a fixed arc interval from its start."""
    if interval <= 0:
        raise ValueError("node interval must be positive")
    nodes = []
    for lane in lanes:
        count = int(np.floor(lane.length / interval + 1e-9)) + 1
        arcs = np.arange(count) * interval
        xs, ys, _, _ = lane.centerline.interpolate(arcs)
        codes = np.full(count, NODE_TYPE_CODES[lane.type])
        for zone in zones:
            inside = shapely.contains_xy(zone.shape, xs, ys)
            codes[inside] = NODE_TYPE_CODES[zone.kind]
        for k in range(count):
            nodes.append(RoadNode(
                node_id=f"{lane.lane_id}:{k}",
                position=(float(xs[k]), float(ys[k])),
                lane_id=lane.lane_id,
                arc_position=float(arcs[k]),
                node_type=int(codes[k]),
            ))
    return nodes


def _load_schema():
    text = resources.files("scnmine").joinpath("schemas/road_map.schema.json").read_text()
    return json.loads(text)


_SCHEMA = None


def _validate_schema(doc):
    global _SCHEMA
    if _SCHEMA is None:
        _SCHEMA = _load_schema()
    validator = jsonschema.Draft202012Validator(_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path)
        raise SchemaError(path, err.message)


def parse_road_map(path, node_interval=None):
    """Read and validate a road-map JSON document.

    Road nodes are sampled from the centerlines at ``node_interval`` (or the
    document's own ``node_interval``, default 10 m) when the file carries none.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"invalid JSON: {exc}") from None
    return RoadMap.from_dict(doc, node_interval=node_interval)


def write_road_map(road_map, path):
    Path(path).write_text(json.dumps(road_map.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
