"""Extreme-scenario labeling within one interaction type.

Pairwise Graph-DTW distances feed a density clustering; scenarios left as
noise are the extreme candidates. Classical MDS and a Gaussian KDE give a
2D picture of the distance structure. Two reference labelings, minimum TTC
and a flat-vector DTW, are compared against the Graph-DTW flags on a Venn
diagram.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrum, TooFewScenarios, UniverseMismatch
from .graph_dtw import DTWConfig, dtw, effective_window, encoded, frame_distance_matrix, frames_of
from .ingest import natural_key
from .scene_graph import build_scenes, vref
from .slicing import InteractionType
from .tree_metric import node_feature

NOISE = -1
METRICS = ("graph_dtw", "ttc", "vector_dtw")
DEFAULT_TTC_THRESHOLDS = {"highway": 1.0, "intersection": 0.5}
CLOSING_TOL = 1e-6  # m/s; equal speeds up to rounding are not closing


# ---------------------------------------------------------------------------
# distance matrix
# ---------------------------------------------------------------------------

@dataclass
class DistanceMatrix:
    """Symmetric scenario distances with a zero diagonal."""

    ids: list
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = len(self.ids)
        if v.shape != (n, n):
            raise ValueError(f"matrix shape {v.shape} does not match {n} ids")
        if not np.all(np.isfinite(v)) or (v < 0).any():
            raise ValueError("distances must be finite and non-negative")
        if np.abs(v - v.T).max(initial=0.0) > 1e-9:
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0.0):
            raise ValueError("diagonal must be exactly zero")
        self.values = v

    def __len__(self):
        return len(self.ids)

    def to_csv(self, path):
        """Header row ``id,<ids...>`` then one row per scenario (repr floats)."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + [str(i) for i in self.ids])
            for i, row in zip(self.ids, self.values):
                w.writerow([str(i)] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        ids = [_parse_id(x) for x in rows[0][1:]]
        vals = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float).reshape(len(ids), len(ids))
        return cls(ids, vals)


def _parse_id(x):
    try:
        return int(x)
    except ValueError:
        return x


def pairwise_distances(atoms, cfg=None, threads=1, distance=None):
    """All pairwise scenario distances, each unordered pair computed once.

    Parameters
    ----------
    atoms : sequence of AtomScenario
        Scenarios of one interaction type (mixed types warn once).
    cfg : DTWConfig, optional
    threads : int
        Worker threads; the result does not depend on it.
    distance : callable, optional
        ``distance(a, b)`` replacing the Graph-DTW distance.

    Raises
    ------
    TooFewScenarios
        Fewer than two scenarios.
    """
    atoms = list(atoms)
    n = len(atoms)
    if n < 2:
        raise TooFewScenarios(f"need at least 2 scenarios, got {n}")
    cfg = cfg or DTWConfig()
    if len({a.itype for a in atoms}) > 1:
        warnings.warn("pairwise distances over mixed interaction types", stacklevel=2)
    if distance is None:
        cache = {}
        # encode up front so worker threads only read the cache
        for a in atoms:
            encoded(a, cfg, cache)

        def distance(a, b):
            return dtw(frame_distance_matrix(a, b, cfg, cache)).normalized

    pairs = list(itertools.combinations(range(n), 2))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vals = list(ex.map(lambda p: distance(atoms[p[0]], atoms[p[1]]), pairs))
    else:
        vals = [distance(atoms[i], atoms[j]) for i, j in pairs]
    m = np.zeros((n, n))
    for (i, j), d in zip(pairs, vals):
        m[i, j] = m[j, i] = float(d)
    return DistanceMatrix([a.scenario_id for a in atoms], m)


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def _values(m):
    return m.values if isinstance(m, DistanceMatrix) else np.asarray(m, dtype=float)


def dbscan(m, eps, min_pts=4):
    """Density clustering over a precomputed distance matrix.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters grow from core points in index order; a border
    point joins the first cluster that reaches it. Returns labels with
    ``NOISE`` (-1) for unreachable points.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    D = _values(m)
    n = len(D)
    nbrs = [np.flatnonzero(D[i] <= eps) for i in range(n)]
    core = np.array([len(x) >= min_pts for x in nbrs], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    cid = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cid
        stack = [i]
        while stack:
            p = stack.pop()
            if not core[p]:
                continue
            for q in nbrs[p]:
                if labels[q] == NOISE:
                    labels[q] = cid
                    stack.append(q)
        cid += 1
    return labels


def k_distances(m, k):
    """Distance of every point to its ``k``-th nearest other point, sorted ascending."""
    D = _values(m)
    n = len(D)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in 1..{n - 1}")
    kd = np.sort(D, axis=1)[:, k]  # column 0 is the point itself
    return np.sort(kd)


def k_distance_eps(m, min_pts=4):
    """``eps`` at the elbow of the sorted k-distance curve (k = min_pts - 1).

    The curve is rescaled to the unit square and the elbow is the sample
    farthest below the chord joining its end points, the discrete stand-in
    for the point of maximum curvature. A flat curve returns its level.
    """
    kd = k_distances(m, max(1, min_pts - 1))
    n = len(kd)
    span = kd[-1] - kd[0]
    if n < 3 or span <= 0:
        return float(kd[-1]) if kd[-1] > 0 else 1.0
    x = np.linspace(0.0, 1.0, n)
    y = (kd - kd[0]) / span
    i = int(np.argmax(x - y))
    eps = float(kd[i])
    return eps if eps > 0 else float(kd[kd > 0][0])


# ---------------------------------------------------------------------------
# embedding and density
# ---------------------------------------------------------------------------

def mds_embed(m, dims=2):
    """Classical (Torgerson) MDS coordinates.

    Negative eigenvalues are clamped to zero; each axis is flipped so its
    first clearly nonzero coordinate is positive. Warns ``DegenerateSpectrum``
    and returns zeros when no eigenvalue is positive.
    """
    D = _values(m)
    n = len(D)
    if n < 2:
        raise TooFewScenarios("MDS needs at least 2 points")
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    B = 0.5 * (B + B.T)
    w, V = np.linalg.eigh(B)
    order = np.argsort(-w, kind="stable")[:dims]
    w, V = w[order], V[:, order]
    scale = max(1.0, float(np.abs(B).max()))
    if np.all(w <= 1e-12 * scale):
        warnings.warn("no positive eigenvalue; returning zero coordinates", DegenerateSpectrum, stacklevel=2)
        return np.zeros((n, dims))
    w = np.clip(w, 0.0, None)
    X = V * np.sqrt(w)
    tol = 1e-9 * max(1.0, float(np.abs(X).max()))
    for k in range(X.shape[1]):
        nz = np.flatnonzero(np.abs(X[:, k]) > tol)
        if nz.size and X[nz[0], k] < 0:
            X[:, k] = -X[:, k]
    X[np.abs(X) <= tol] = 0.0
    return X


def scott_bandwidth(coords):
    """``sigma * n ** (-1 / (d + 4))`` with ``sigma`` the root-mean coordinate variance (1.0 if degenerate)."""
    X = np.asarray(coords, dtype=float)
    n, d = X.shape
    if n < 2:
        return 1.0
    sigma = math.sqrt(float(np.mean(X.var(axis=0, ddof=1))))
    if sigma <= 0:
        return 1.0
    return sigma * n ** (-1.0 / (d + 4))


def kde_density(coords, bandwidth=None):
    """Isotropic Gaussian kernel density at each sample over all samples."""
    X = np.asarray(coords, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    h = scott_bandwidth(X) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    norm = (2.0 * math.pi * h * h) ** (-d / 2.0)
    return norm * np.exp(-0.5 * sq / (h * h)).mean(axis=1)


# ---------------------------------------------------------------------------
# reference labelings
# ---------------------------------------------------------------------------

def scenario_context(road_map):
    """``"intersection"`` when the map has point conflict zones, else ``"highway"``."""
    return "intersection" if any(z.kind == "static_point" for z in road_map.conflict_zones) else "highway"


def _longitudinal_ttc(e, o, ie, io, ge, go, Le, Lo):
    """Bumper gap along the ego heading over closing speed, per frame."""
    h = ge.heading[ie]
    ux, uy = np.cos(h), np.sin(h)
    rel = (o.x[io] - e.x[ie]) * ux + (o.y[io] - e.y[ie]) * uy
    ve = e.vx[ie] * ux + e.vy[ie] * uy
    vo = o.vx[io] * ux + o.vy[io] * uy
    gap = np.abs(rel) - (Le + Lo) / 2.0
    closing = np.where(rel >= 0, ve - vo, vo - ve)
    ok = (gap > 0) & (closing > CLOSING_TOL)
    return np.where(ok, gap / np.where(ok, closing, 1.0), np.inf)


def _heading_ttc(e, o, ie, io, Le, Lo):
    dx, dy = o.x[io] - e.x[ie], o.y[io] - e.y[ie]
    dist = np.hypot(dx, dy)
    gap = dist - (Le + Lo) / 2.0
    closing = -((o.vx[io] - e.vx[ie]) * dx + (o.vy[io] - e.vy[ie]) * dy) / np.maximum(dist, 1e-9)
    ok = (gap > 0) & (closing > CLOSING_TOL)
    return np.where(ok, gap / np.where(ok, closing, 1.0), np.inf)


def _virtual_ttc(rec, ego_id, oid, zone_id, ie, io, ge, go):
    arcs = rec.conflict_arcs(ego_id, oid, zone_id)
    if arcs is None:
        return np.full(len(ie), np.inf)
    te, to = rec.tracks[ego_id], rec.tracks[oid]
    s_e = arcs[0] - rec.path_arc(ego_id)[ie] - te.length / 2.0
    s_o = arcs[1] - rec.path_arc(oid)[io] + to.length / 2.0
    dr = s_e - s_o
    closing = ge.speed[ie] - go.speed[io]
    ok = (dr > 0) & (closing > CLOSING_TOL)  # dr <= 0: the other has cleared the conflict point
    return np.where(ok, dr / np.where(ok, closing, 1.0), np.inf)


def min_ttc(atom, rec=None):
    """Minimum over frames and interactive vehicles of the type-specific TTC (``inf`` if never closing)."""
    rec = rec or atom.source
    best = math.inf
    te = rec.tracks[atom.ego_id]
    ge = rec.geometry(atom.ego_id)
    frames = np.arange(atom.start_frame, atom.end_frame + 1)
    for r in atom.records:
        if r.other_id not in rec.tracks:
            continue
        to = rec.tracks[r.other_id]
        go = rec.geometry(r.other_id)
        ie, io = frames - te.first_frame, frames - to.first_frame
        ok = (ie >= 0) & (ie < len(te)) & (io >= 0) & (io < len(to))
        ie, io = ie[ok], io[ok]
        if ie.size == 0:
            continue
        if r.itype.is_static and r.zone_id is not None:
            ttc = _virtual_ttc(rec, atom.ego_id, r.other_id, r.zone_id, ie, io, ge, go)
        elif r.itype == InteractionType.HeadingLine:
            ttc = _heading_ttc(te, to, ie, io, te.length, to.length)
        else:
            ttc = _longitudinal_ttc(te, to, ie, io, ge, go, te.length, to.length)
        best = min(best, float(ttc.min()))
    return best


def ttc_label(atoms, road_map=None, thresholds=None):
    """Flag scenarios whose minimum TTC falls below the context threshold.

    Returns ``(flags, min_ttcs)`` as boolean and float arrays.
    """
    thresholds = dict(DEFAULT_TTC_THRESHOLDS if thresholds is None else thresholds)
    if any(v <= 0 for v in thresholds.values()):
        raise ValueError("TTC thresholds must be positive")
    flags, values = [], []
    for a in atoms:
        rm = road_map if road_map is not None else a.source.road_map
        thr = thresholds[scenario_context(rm)]
        t = min_ttc(a)
        values.append(t)
        flags.append(t < thr)
    return np.array(flags, dtype=bool), np.array(values, dtype=float)


def vector_sequence(atom, cfg=None):
    """Per-frame concatenated risk features of the interactive vehicles (ascending id)."""
    cfg = cfg or DTWConfig()
    graphs = build_scenes(atom, None, None, frames_of(atom, cfg.stride))
    others = atom.interactive
    out = np.zeros((len(graphs), 3 * len(others)))
    for t, g in enumerate(graphs):
        ego = g.ego
        for k, oid in enumerate(others):
            v = g.vehicles.get(oid)
            if v is None:
                continue
            out[t, 3 * k:3 * k + 3] = node_feature(v.speed, ego.speed, g.edge_dr(vref(g.ego_id), vref(oid)),
                                                   cfg.metric)
    return out


def vector_dtw(seq_a, seq_b, window=None):
    """Normalized DTW over Euclidean frame distances, zero-padding the narrower sequence."""
    A, B = np.asarray(seq_a, dtype=float), np.asarray(seq_b, dtype=float)
    width = max(A.shape[1], B.shape[1])
    A = np.pad(A, ((0, 0), (0, width - A.shape[1])))
    B = np.pad(B, ((0, 0), (0, width - B.shape[1])))
    D = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))
    return dtw(D, effective_window(len(A), len(B), window)).normalized


def vector_dtw_baseline(a, b, cfg=None):
    """Flat-vector DTW distance between two scenarios."""
    cfg = cfg or DTWConfig()
    return vector_dtw(vector_sequence(a, cfg), vector_sequence(b, cfg), cfg.window)


# ---------------------------------------------------------------------------
# Venn comparison
# ---------------------------------------------------------------------------

VENN_REGIONS = ("graph_dtw_only", "ttc_only", "vector_dtw_only", "graph_dtw&ttc", "graph_dtw&vector_dtw",
                "ttc&vector_dtw", "all")


def compare_sets(flags):
    """Seven Venn region counts of three flag maps ``{metric: {scenario_id: bool}}``.

    Also reports the union size and the share of the union flagged only by
    Graph-DTW.

    Raises
    ------
    UniverseMismatch
        The three maps do not cover the same scenarios.
    """
    missing = [k for k in METRICS if k not in flags]
    if missing:
        raise UniverseMismatch(f"missing flag sets: {missing}")
    universes = [set(flags[k]) for k in METRICS]
    if not universes[0] == universes[1] == universes[2]:
        raise UniverseMismatch("flag maps cover different scenario sets")
    counts = dict.fromkeys(VENN_REGIONS, 0)
    members = {r: [] for r in VENN_REGIONS}
    for sid in sorted(universes[0], key=natural_key):
        g, t, v = (bool(flags[k][sid]) for k in METRICS)
        key = {(1, 0, 0): "graph_dtw_only", (0, 1, 0): "ttc_only", (0, 0, 1): "vector_dtw_only",
               (1, 1, 0): "graph_dtw&ttc", (1, 0, 1): "graph_dtw&vector_dtw", (0, 1, 1): "ttc&vector_dtw",
               (1, 1, 1): "all"}.get((int(g), int(t), int(v)))
        if key is not None:
            counts[key] += 1
            members[key].append(sid)
    union = sum(counts.values())
    return {"regions": counts, "members": members, "union": union,
            "graph_dtw_only_fraction": counts["graph_dtw_only"] / union if union else 0.0}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class LabelConfig:
    eps: float | None = None  # None: k-distance heuristic
    min_pts: int = 4
    bandwidth: float | None = None  # None: Scott rule
    ttc_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_TTC_THRESHOLDS))
    vector_eps: float | None = None


@dataclass
class LabelReport:
    ids: list
    clusters: np.ndarray
    flags: dict  # metric -> bool array aligned with ids
    coords: np.ndarray
    density: np.ndarray
    eps: float
    min_pts: int
    venn: dict
    min_ttc: np.ndarray | None = None
    itype: str | None = None

    def flag_maps(self):
        return {k: dict(zip(self.ids, map(bool, v))) for k, v in self.flags.items()}

    def to_dict(self):
        def f(x):
            return None if not math.isfinite(x) else float(x)

        scen = []
        for i, sid in enumerate(self.ids):
            c = int(self.clusters[i])
            scen.append({
                "id": sid,
                "cluster": "NOISE" if c == NOISE else c,
                "metric_flags": {f"{k}_extreme": bool(self.flags[k][i]) for k in self.flags},
                "x": float(self.coords[i, 0]),
                "y": float(self.coords[i, 1]),
                "density": float(self.density[i]),
                "min_ttc": None if self.min_ttc is None else f(float(self.min_ttc[i])),
            })
        return {"itype": self.itype, "eps": self.eps, "min_pts": self.min_pts, "scenarios": scen,
                "venn": {k: v for k, v in self.venn.items() if k != "members"}}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def coords_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "x", "y", "density", "cluster", "graph_dtw_extreme", "ttc_extreme", "vector_dtw_extreme"])
        for i, sid in enumerate(self.ids):
            w.writerow([sid, repr(float(self.coords[i, 0])), repr(float(self.coords[i, 1])),
                        repr(float(self.density[i])), int(self.clusters[i])]
                       + [int(bool(self.flags[k][i])) if k in self.flags else 0 for k in METRICS])
        return buf.getvalue()


def label_matrix(m, cfg=None, extra_flags=None):
    """Cluster, embed and density-estimate a distance matrix.

    ``extra_flags`` maps other metric names to boolean arrays aligned with
    ``m.ids``; missing reference metrics count as unflagged.
    """
    cfg = cfg or LabelConfig()
    n = len(m)
    if n < 2:
        raise TooFewScenarios("labeling needs at least 2 scenarios")
    eps = cfg.eps if cfg.eps is not None else k_distance_eps(m, cfg.min_pts)
    labels = dbscan(m, eps, cfg.min_pts)
    coords = mds_embed(m)
    dens = kde_density(coords, cfg.bandwidth)
    flags = {"graph_dtw": labels == NOISE}
    for k in METRICS[1:]:
        flags[k] = np.asarray(extra_flags[k], dtype=bool) if extra_flags and k in extra_flags else np.zeros(n, bool)
    report = LabelReport(list(m.ids), labels, flags, coords, dens, float(eps), cfg.min_pts, {})
    report.venn = compare_sets(report.flag_maps())
    return report


def reference_flags(atoms, cfg=None, dtw_cfg=None, threads=1):
    """TTC and vector-DTW extreme flags for ``atoms``.

    Returns ``(flags, min_ttcs, vector_matrix)`` where ``flags`` maps
    ``"ttc"`` and ``"vector_dtw"`` to boolean arrays in input order.
    """
    cfg = cfg or LabelConfig()
    dtw_cfg = dtw_cfg or DTWConfig()
    atoms = list(atoms)
    ttc_flags, ttcs = ttc_label(atoms, None, cfg.ttc_thresholds)
    seqs = [vector_sequence(a, dtw_cfg) for a in atoms]
    idx = {id(a): k for k, a in enumerate(atoms)}
    vm = pairwise_distances(atoms, dtw_cfg, threads,
                            distance=lambda a, b: vector_dtw(seqs[idx[id(a)]], seqs[idx[id(b)]], dtw_cfg.window))
    veps = cfg.vector_eps if cfg.vector_eps is not None else k_distance_eps(vm, cfg.min_pts)
    vflags = dbscan(vm, veps, cfg.min_pts) == NOISE
    return {"ttc": ttc_flags, "vector_dtw": vflags}, ttcs, vm


def label_scenarios(atoms, cfg=None, dtw_cfg=None, threads=1):
    """Full labeling of one interaction type: Graph-DTW clusters plus TTC and vector-DTW references.

    Returns ``(report, graph_dtw_matrix, vector_matrix)``.
    """
    cfg = cfg or LabelConfig()
    dtw_cfg = dtw_cfg or DTWConfig()
    atoms = list(atoms)
    m = pairwise_distances(atoms, dtw_cfg, threads)
    extra, ttcs, vm = reference_flags(atoms, cfg, dtw_cfg, threads)
    report = label_matrix(m, cfg, extra)
    report.min_ttc = ttcs
    types = {a.itype for a in atoms}
    report.itype = types.pop().snake if len(types) == 1 else None
    return report, m, vm


def grid_search(m, reference, eps_grid, min_pts_grid=(3, 4, 5)):
    """``(eps, min_pts, jaccard)`` maximizing the overlap of DBSCAN noise with a reference flag array.

    Ties keep the first grid point (eps ascending within min_pts ascending).
    """
    ref = np.asarray(reference, dtype=bool)
    best = None
    for mp in sorted(min_pts_grid):
        for eps in sorted(eps_grid):
            noise = dbscan(m, eps, mp) == NOISE
            union = (noise | ref).sum()
            jac = (noise & ref).sum() / union if union else 1.0
            if best is None or jac > best[2]:
                best = (float(eps), int(mp), float(jac))
    return best
