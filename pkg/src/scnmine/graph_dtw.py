"""Scenario distance by dynamic time warping over per-frame scene distances.

Two atom scenarios are compared frame by frame with the scene distance, and
the resulting matrix is warped with the classic three-step recurrence

    L(x, y) = D(x, y) + min(L(x-1, y-1), L(x-1, y), L(x, y-1))

under boundary, continuity and monotony constraints. The scenario distance
is ``L(M, N) / max(M, N)``.

Scenes are encoded once per scenario into flat breadth-first arrays (one
V2V and one V2N tree per frame) so the frame matrix is filled by compiled
code.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import BandTooNarrow, EmptyScenario
from .scene_graph import build_scenes, flat_expansion
from .tree_metric import MetricConfig

DEFAULT_WINDOW = 25


@dataclass(frozen=True)
class DTWConfig:
    """Warping parameters.

    ``window`` is the band half-width in frames (``None`` = unbounded);
    ``stride`` subsamples frames before the matrix is built.
    """

    window: int | None = DEFAULT_WINDOW
    stride: int = 1
    metric: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        if self.window is not None and self.window < 0:
            raise ValueError("window must be >= 0 or None")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class FrameDistanceMatrix:
    """Scene distances between the frames of two scenarios (``inf`` = outside the band)."""

    values: np.ndarray
    window: int | None = None

    @property
    def M(self):
        return self.values.shape[0]

    @property
    def N(self):
        return self.values.shape[1]

    @property
    def computed(self):
        return np.isfinite(self.values)


class WarpResult(NamedTuple):
    path: list  # [(x, y)], zero-based
    L_min: float
    normalized: float


class EncodedScenario(NamedTuple):
    arrays: tuple  # (feat, first, nchild, depth, blank, roots)
    n_frames: int
    scenario_id: int
    itype: object


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

def _encode_graphs(graphs, metric):
    L = metric.depth
    feats, firsts, nchilds, depths = [], [], [], []
    roots = [0]
    base = 0
    for g in graphs:
        for kind in ("V2V", "V2N"):
            f, first, nc, dep = flat_expansion(g, kind, L, metric)
            feats += f
            firsts += [x + base for x in first]
            nchilds += nc
            depths += dep
            base += len(f)
            roots.append(base)
    feat = np.array(feats, dtype=float).reshape(-1, 3)
    first = np.array(firsts, dtype=np.int64)
    nchild = np.array(nchilds, dtype=np.int64)
    depth = np.array(depths, dtype=np.int64)
    # children always follow their parent, so one bottom-up pass covers every tree
    blank = _kernels.blank_costs(feat, first, nchild, depth, metric.weight_array(), L, 0, len(feat))
    return feat, first, nchild, depth, blank, np.array(roots, dtype=np.int64)


def frames_of(atom, stride=1):
    """Frames used for the comparison (every ``stride``-th, last frame always kept)."""
    fr = list(atom.frames)[::stride]
    if fr and fr[-1] != atom.end_frame:
        fr.append(atom.end_frame)
    return fr


def encode_scenario(atom, cfg=None, ts=None, road_map=None):
    """Flatten the per-frame V2V and V2N computation trees of ``atom``.

    Tree ``2k`` is the V2V tree of frame ``k`` and ``2k + 1`` its V2N tree;
    ``roots`` holds the ``2F + 1`` tree boundaries.
    """
    cfg = cfg or DTWConfig()
    if atom.n_frames < 1:
        raise EmptyScenario(f"scenario {atom.scenario_id} has no frames")
    graphs = build_scenes(atom, ts, road_map, frames_of(atom, cfg.stride))
    return EncodedScenario(_encode_graphs(graphs, cfg.metric), len(graphs), atom.scenario_id, atom.itype)


def encoded(x, cfg=None, cache=None):
    """``x`` encoded, reusing ``cache`` (a dict keyed by scenario id and span) when given."""
    cfg = cfg or DTWConfig()
    if isinstance(x, EncodedScenario):
        return x
    if cache is not None:
        key = (x.scenario_id, x.ego_id, x.start_frame, x.end_frame)
        enc = cache.get(key)
        if enc is None:
            enc = encode_scenario(x, cfg)
            cache[key] = enc
        return enc
    return encode_scenario(x, cfg)


# ---------------------------------------------------------------------------
# matrix and warping
# ---------------------------------------------------------------------------

def frame_distance_matrix(a, b, cfg=None, cache=None):
    """Scene distance of every frame pair of ``a`` and ``b`` inside the band.

    ``a`` and ``b`` are atom scenarios (with an attached source) or encoded
    scenarios. Cells outside the band ``|x(N-1) - y(M-1)| <= W max(M-1, N-1)``
    are left at ``inf``. ``W`` is widened when needed so the band always
    connects the corners (see ``effective_window``).

    Raises
    ------
    EmptyScenario
        Either scenario has no frames.
    """
    cfg = cfg or DTWConfig()
    for s in (a, b):
        n = s.n_frames
        if n < 1:
            raise EmptyScenario(f"scenario {s.scenario_id} has no frames")
    ea, eb = encoded(a, cfg, cache), encoded(b, cfg, cache)
    m = cfg.metric
    W = effective_window(ea.n_frames, eb.n_frames, cfg.window)
    W = -1 if W is None else W
    vals = _kernels.frame_matrix(ea.arrays, eb.arrays, ea.n_frames, eb.n_frames, W, m.weight_array(), m.depth,
                                 m.lambda_v2v, m.lambda_v2n)
    return FrameDistanceMatrix(vals, None if W < 0 else W)


def effective_window(M, N, W):
    """Smallest band half-width ``>= W`` that connects the corners of an ``M x N`` matrix.

    The band half-width counts frames of the shorter sequence, so any
    ``W >= 1`` connects; only ``W = 0`` on unequal lengths is widened.
    """
    if W is None or M == N or min(M, N) <= 1:
        return W
    return max(int(W), 1)


def band_mask(M, N, W):
    """Boolean ``(M, N)`` mask of the cells inside the band (``W=None`` = all)."""
    if W is None or M == 1 or N == 1:
        return np.ones((M, N), dtype=bool)
    W = int(W)
    m = max(M, N) - 1
    c = np.arange(M)[:, None] * (N - 1)
    y = np.arange(N)[None, :] * (M - 1)
    return np.abs(c - y) <= W * m


def dtw(m, W=None):
    """Warp a frame distance matrix.

    Parameters
    ----------
    m : FrameDistanceMatrix or array_like
        Non-negative distances; ``inf`` cells are impassable.
    W : int, optional
        Band half-width; ``None`` leaves the matrix as given.

    Raises
    ------
    BandTooNarrow
        The band does not connect the two corners.
    """
    D = np.array(m.values if isinstance(m, FrameDistanceMatrix) else m, dtype=float)
    if D.ndim != 2 or D.size == 0:
        raise EmptyScenario("empty distance matrix")
    M, N = D.shape
    if W is not None:
        if W < 0:
            raise BandTooNarrow(f"window {W} is negative")
        D[~band_mask(M, N, W)] = np.inf
    acc = _kernels.dtw_accumulate(D)
    L_min = float(acc[M - 1, N - 1])
    if not np.isfinite(L_min):
        raise BandTooNarrow(f"band W={W} does not connect (1,1) to ({M},{N})")
    path = [(int(x), int(y)) for x, y in _kernels.dtw_backtrack(acc)]
    return WarpResult(path, L_min, L_min / max(M, N))


def scenario_distance(a, b, cfg=None, cache=None):
    """Normalized warped distance between two scenarios (symmetric).

    Comparing scenarios of different interaction types is allowed with a
    warning.
    """
    cfg = cfg or DTWConfig()
    if a.itype != b.itype:
        warnings.warn(f"comparing {a.itype.value} with {b.itype.value}", stacklevel=2)
    fm = frame_distance_matrix(a, b, cfg, cache)
    return dtw(fm, None).normalized
