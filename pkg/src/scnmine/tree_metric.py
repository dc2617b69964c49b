"""Scene distance between attributed scene graphs.

Each scene is expanded into a vehicle-to-vehicle and a vehicle-to-road-node
computation tree rooted at the ego. Two trees are compared bottom-up: a node
pair costs the Euclidean distance of its features plus a layer-weighted
optimal-transport cost over the two child sets, padded with blank nodes to
equal size. With uniform marginals the transport optimum is a permutation, so
an exact assignment solver is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import shapely
from shapely.geometry import LineString

from . import _kernels
from .errors import KindMismatch, NonFinite, NonSquare, NoCommonConflict


@dataclass(frozen=True)
class MetricConfig:
    """Parameters of the scene distance.

    ``layer_weights[l - 1]`` weighs the child-set transport cost inside a
    subtree of height ``l``; the whole tree has height ``depth``. ``None``
    means 1.0 everywhere.
    """

    depth: int = 3
    layer_weights: tuple | None = None
    lambda_v2v: float = 0.5
    lambda_v2n: float = 0.5
    dr_min: float = 0.1
    road_scheme: str = "inverse_distance_type"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if abs(self.lambda_v2v + self.lambda_v2n - 1.0) > 1e-12:
            raise ValueError("lambda_v2v + lambda_v2n must equal 1")
        if self.lambda_v2v < 0 or self.lambda_v2n < 0:
            raise ValueError("tree-kind weights must be non-negative")
        if self.dr_min <= 0:
            raise ValueError("dr_min must be positive")
        if self.layer_weights is not None:
            if len(self.layer_weights) != self.depth:
                raise ValueError("layer_weights needs one entry per tree height 1..depth")
            if any(w <= 0 for w in self.layer_weights):
                raise ValueError("layer weights must be positive")
        if self.road_scheme != "inverse_distance_type":
            raise ValueError(f"unknown road feature scheme {self.road_scheme!r}")

    def weight_array(self):
        """Weights indexed directly by subtree height (index 0 unused)."""
        w = np.ones(self.depth + 1)
        if self.layer_weights is not None:
            w[1:] = self.layer_weights
        return w


# ---------------------------------------------------------------------------
# node features
# ---------------------------------------------------------------------------

def node_feature(v, v_ego, dr, cfg=None):
    """Risk feature of a vehicle relative to a reference vehicle.

    ``(v / dr, (v - v_ego) / dr, (v**2 - v_ego**2) / dr)`` with ``dr``
    floored at ``cfg.dr_min``.

    >>> node_feature(10.0, 20.0, 5.0).tolist()
    [2.0, -2.0, -60.0]
    """
    dr_min = cfg.dr_min if cfg is not None else MetricConfig.dr_min
    return np.array(_risk(v, v_ego, dr, dr_min))


def _risk(v, v_ego, dr, dr_min):
    r = max(float(dr), dr_min)
    return (v / r, (v - v_ego) / r, (v * v - v_ego * v_ego) / r)


def road_feature(dr, node_type, cfg=None):
    """Road-node feature ``(1 / dr, node_type, 0)``."""
    dr_min = cfg.dr_min if cfg is not None else MetricConfig.dr_min
    return np.array([1.0 / max(float(dr), dr_min), float(node_type), 0.0])


ZERO_FEATURE = np.zeros(3)


# ---------------------------------------------------------------------------
# optimal transport
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportPlan:
    n: int
    flow: np.ndarray  # (n, n) 0/1
    assignment: np.ndarray  # column of each row
    cost: float  # <C, flow> / n


def _check_square(C):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
        raise NonSquare(f"cost matrix must be square and non-empty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise NonFinite("cost matrix has non-finite entries")
    return C


def ot_assignment(C):
    """Exact transport plan between two uniform node sets of equal size.

    Among optimal plans the lexicographically smallest assignment (by the
    column chosen for row 0, then row 1, ...) is returned.
    """
    C = _check_square(C)
    n = C.shape[0]
    best = _kernels.assignment_cost(np.ascontiguousarray(C))
    tol = 1e-12 * (1.0 + abs(best)) * n
    rows = list(range(n))
    free_cols = list(range(n))
    fixed = 0.0
    assign = np.empty(n, dtype=np.int64)
    for i in rows:
        rest_rows = [r for r in rows if r > i]
        for j in free_cols:
            rest_cols = [c for c in free_cols if c != j]
            sub = C[np.ix_(rest_rows, rest_cols)] if rest_rows else np.zeros((0, 0))
            total = fixed + C[i, j] + _kernels.assignment_cost(np.ascontiguousarray(sub))
            if total <= best + tol:
                assign[i] = j
                fixed += C[i, j]
                free_cols.remove(j)
                break
        else:  # pragma: no cover - numerical safety net
            raise RuntimeError("tie-break search lost the optimum")
    flow = np.zeros((n, n), dtype=np.int64)
    flow[np.arange(n), assign] = 1
    cost = float(C[np.arange(n), assign].sum()) / n
    return TransportPlan(n=n, flow=flow, assignment=assign, cost=cost)


# ---------------------------------------------------------------------------
# tree distance
# ---------------------------------------------------------------------------

class FlatTree(NamedTuple):
    feat: np.ndarray
    first: np.ndarray
    nchild: np.ndarray
    depth: np.ndarray


def flatten_tree(tree):
    """Breadth-first arrays for a ``ComputationTree`` (children contiguous)."""
    order = [tree.root]
    first = []
    nchild = []
    depth = [1]
    k = 0
    while k < len(order):
        node = order[k]
        kids = [c for c in node.children if not c.is_blank]
        first.append(len(order))
        nchild.append(len(kids))
        for c in kids:
            order.append(c)
            depth.append(depth[k] + 1)
        k += 1
    feat = np.array([n.feature for n in order], dtype=float).reshape(len(order), 3)
    return FlatTree(feat, np.array(first, dtype=np.int64), np.array(nchild, dtype=np.int64),
                    np.array(depth, dtype=np.int64))


def _blank(flat, weights, L):
    return _kernels.blank_costs(flat.feat, flat.first, flat.nchild, flat.depth, weights, L, 0, len(flat.feat))


def tree_distance(a, b, cfg=None):
    """Distance between two computation trees of the same kind and depth.

    Blank children carry a zero feature and no children; a real subtree
    matched to a blank costs its distance to that blank.
    """
    cfg = cfg or MetricConfig()
    if a.kind != b.kind:
        raise KindMismatch(f"cannot compare {a.kind} tree with {b.kind} tree")
    if a.levels != b.levels:
        raise KindMismatch(f"depth mismatch: {a.levels} vs {b.levels}")
    L = a.levels
    w = np.ones(L + 1)
    if cfg.layer_weights is not None:
        w[1:] = cfg.weight_array()[1:L + 1]
    fa, fb = flatten_tree(a), flatten_tree(b)
    za, zb = _blank(fa, w, L), _blank(fb, w, L)
    return float(_kernels.tree_pair(fa.feat, fa.first, fa.nchild, fa.depth, za, 0, len(fa.feat),
                                    fb.feat, fb.first, fb.nchild, fb.depth, zb, 0, len(fb.feat), w, L))


def scene_distance(ga, gb, cfg=None):
    """``lambda_v2v * d(V2V trees) + lambda_v2n * d(V2N trees)`` for two scene graphs."""
    from .scene_graph import expand_tree

    cfg = cfg or MetricConfig()
    total = 0.0
    for kind, lam in (("V2V", cfg.lambda_v2v), ("V2N", cfg.lambda_v2n)):
        if lam == 0.0:
            continue
        ta = expand_tree(ga, kind, cfg.depth, cfg)
        tb = expand_tree(gb, kind, cfg.depth, cfg)
        total += lam * tree_distance(ta, tb, cfg)
    return total


# ---------------------------------------------------------------------------
# virtual vehicle mapping
# ---------------------------------------------------------------------------

class VirtualLeader(NamedTuple):
    dr: float
    v_virtual: float


class _Resolved:
    """Sentinel: the other vehicle no longer precedes the ego at the conflict."""

    def __repr__(self):
        return "Resolved"


Resolved = _Resolved()


class PathState(NamedTuple):
    """Vehicle path (past and future samples) with the index of the current sample."""

    xy: np.ndarray
    index: int
    speed: float
    length: float = 4.5


def virtual_gap(s_ego, s_other, v_other):
    """Map the other vehicle onto the ego path as a leader ``s_ego - s_other`` ahead."""
    dr = float(s_ego) - float(s_other)
    if dr <= 0.0:
        return Resolved
    return VirtualLeader(dr, float(v_other))


def _arc_at_index(xy, index):
    seg = np.hypot(*np.diff(xy[: index + 1], axis=0).T) if index > 0 else np.zeros(0)
    return float(seg.sum())


def _line(xy):
    xy = np.asarray(xy, dtype=float)
    keep = np.ones(len(xy), dtype=bool)
    keep[1:] = np.any(np.diff(xy, axis=0) != 0.0, axis=1)
    return LineString(xy[keep]) if keep.sum() >= 2 else None


def conflict_arcs(ego_xy, other_xy, zone, merge_tol=1.0):
    """Arc positions of the conflict point along both paths.

    The conflict point is the first point of the other path (in its travel
    order) lying within ``merge_tol`` of the ego path inside the zone
    (buffered by ``merge_tol``).

    Raises
    ------
    NoCommonConflict
        The two paths never meet inside the zone.
    """
    ego_line, oth_line = _line(ego_xy), _line(other_xy)
    if ego_line is None or oth_line is None:
        raise NoCommonConflict("degenerate path")
    shape = zone.shape.buffer(merge_tol)
    near = oth_line.intersection(ego_line.buffer(merge_tol)).intersection(shape)
    if near.is_empty:
        raise NoCommonConflict(f"paths do not meet inside zone {zone.zone_id}")
    coords = shapely.get_coordinates(near)
    arcs = oth_line.project(shapely.points(coords))
    point = shapely.Point(coords[int(np.argmin(arcs))])
    return float(ego_line.project(point)), float(oth_line.project(point))


def virtual_map(road_map, ego, other, zone, merge_tol=1.0):
    """Project ``other`` onto the ego path as a virtual leader.

    ``zone`` is a ``ConflictZone`` or, for the degenerate shared-lane case,
    a lane id. Distances are bumper to bumper: the ego front must reach the
    conflict point after the rear of the other has passed it.

    Returns ``VirtualLeader(dr, v_virtual)`` or ``Resolved`` when ``dr <= 0``.

    Raises
    ------
    NoCommonConflict
        The two paths never meet inside the zone.
    """
    if isinstance(zone, str):
        lane = road_map.lanes[zone]
        se, _, _, _ = lane.centerline.project(*ego.xy[ego.index])
        so, _, _, _ = lane.centerline.project(*other.xy[other.index])
        se = lane.progress(float(se[0]))
        so = lane.progress(float(so[0]))
        # common point: rear bumper of the other vehicle
        s_e = (so - other.length / 2.0) - (se + ego.length / 2.0)
        return virtual_gap(s_e, 0.0, other.speed)
    ae, ao = conflict_arcs(ego.xy, other.xy, zone, merge_tol)
    s_o = ao - _arc_at_index(other.xy, other.index) + other.length / 2.0
    s_e = ae - _arc_at_index(ego.xy, ego.index) - ego.length / 2.0
    return virtual_gap(s_e, s_o, other.speed)


def time_to_collision(dr, v_follower, v_leader):
    """Gap over closing speed; ``inf`` when not closing."""
    closing = v_follower - v_leader
    if closing <= 0.0 or not math.isfinite(dr):
        return math.inf
    return max(dr, 0.0) / closing
