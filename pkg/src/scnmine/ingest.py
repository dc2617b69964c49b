"""Track ingestion: CSV parsing, resampling, smoothing and map validation.

Tracks are stored column-wise (one numpy array per field) because every
consumer downstream works on whole trajectories; ``Track.points`` gives the
row view when it is needed.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
import re
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import DuplicateSample, MalformedRow, MissingColumn, TrackTooShort

logger = logging.getLogger(__name__)

# semantic field -> CSV header, HighD-style. HighD stores the vehicle's
# longitudinal extent in "width" and the lateral extent in "height".
DEFAULT_COLUMNS = {
    "frame": "frame",
    "id": "id",
    "x": "x",
    "y": "y",
    "vx": "xVelocity",
    "vy": "yVelocity",
    "heading": "heading",
    "length": "width",
    "width": "height",
    "lane": "laneId",
}
REQUIRED_FIELDS = ("frame", "id", "x", "y", "vx", "vy")
DEFAULT_VEHICLE_LENGTH = 4.5
DEFAULT_VEHICLE_WIDTH = 1.8


@dataclass(frozen=True)
class IngestConfig:
    """Ingestion parameters.

    ``columns`` maps each semantic field to its CSV header; ``heading``,
    ``length``, ``width`` and ``lane`` are optional in the file.
    """

    columns: dict = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    dt: float = 0.04
    source_dt: float | None = None
    smoothing_window: int = 5
    node_interval: float = 10.0
    max_fill_gap: float = 0.5

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.source_dt is not None and self.source_dt <= 0:
            raise ValueError("source_dt must be positive")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing_window must be an odd integer >= 1")
        if self.node_interval <= 0:
            raise ValueError("node_interval must be positive")
        unknown = set(self.columns) - set(DEFAULT_COLUMNS)
        if unknown:
            raise ValueError(f"unknown column fields: {sorted(unknown)}")

    @property
    def input_dt(self):
        return self.source_dt if self.source_dt is not None else self.dt

    def header(self, name):
        return self.columns.get(name, DEFAULT_COLUMNS[name])


class TrackPoint(NamedTuple):
    frame_index: int
    t: float
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    lane_id: str | None


_ARRAY_FIELDS = ("frames", "x", "y", "vx", "vy", "heading", "lane")


@dataclass(eq=False)
class Track:
    vehicle_id: str
    length: float
    width: float
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    heading: np.ndarray
    lane: np.ndarray  # object array of str | None
    dt: float = 0.04

    def __len__(self):
        return len(self.frames)

    @property
    def first_frame(self):
        return int(self.frames[0])

    @property
    def last_frame(self):
        return int(self.frames[-1])

    @property
    def t(self):
        return self.frames * self.dt

    @property
    def speed(self):
        return np.hypot(self.vx, self.vy)

    @property
    def points(self):
        return [
            TrackPoint(int(f), float(f) * self.dt, float(x), float(y), float(vx), float(vy), float(h), ln)
            for f, x, y, vx, vy, h, ln in zip(self.frames, self.x, self.y, self.vx, self.vy, self.heading, self.lane)
        ]

    def index_of(self, frame):
        """Row index of ``frame`` or -1 when absent (tracks are gap-free after resampling)."""
        i = int(frame) - self.first_frame
        if 0 <= i < len(self.frames) and self.frames[i] == frame:
            return i
        hit = np.flatnonzero(self.frames == frame)
        return int(hit[0]) if hit.size else -1

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        if (self.vehicle_id, self.length, self.width, self.dt) != (other.vehicle_id, other.length, other.width, other.dt):
            return False
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _ARRAY_FIELDS)


@functools.lru_cache(maxsize=65536)
def _natural_key(s):
    parts = re.split(r"(\d+)", s)
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in parts if p != "")


def natural_key(vid):
    """Sort key ordering numeric ids numerically and the rest lexically."""
    return _natural_key(str(vid))


@dataclass(eq=False)
class TrackSet:
    dt: float
    tracks: dict

    def __post_init__(self):
        self.tracks = {k: self.tracks[k] for k in sorted(self.tracks, key=natural_key)}

    def __len__(self):
        return len(self.tracks)

    def __getitem__(self, vid):
        return self.tracks[vid]

    def __contains__(self, vid):
        return vid in self.tracks

    @property
    def vehicle_ids(self):
        return list(self.tracks)

    @property
    def frame_range(self):
        if not self.tracks:
            return (0, -1)
        return (min(t.first_frame for t in self.tracks.values()), max(t.last_frame for t in self.tracks.values()))

    def __eq__(self, other):
        if not isinstance(other, TrackSet):
            return NotImplemented
        return self.dt == other.dt and list(self.tracks) == list(other.tracks) and all(
            self.tracks[k] == other.tracks[k] for k in self.tracks
        )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _to_float(values, header, first_line, allow_empty=False):
    try:
        out = values.astype(float)
    except ValueError:
        out = None
    if out is not None and (allow_empty or np.all(np.isfinite(out))):
        return out
    for i, v in enumerate(values):
        if allow_empty and v == "":
            continue
        try:
            f = float(v)
        except ValueError:
            raise MalformedRow(first_line + i, f"non-numeric {header}={v!r}") from None
        if not math.isfinite(f):
            raise MalformedRow(first_line + i, f"non-finite {header}={v!r}")
    raise AssertionError("unreachable")  # pragma: no cover


def parse_tracks(path, cfg=None):
    """Parse a tracks CSV into a ``TrackSet`` with ``dt = cfg.input_dt``.

    Raises
    ------
    MissingColumn
        A required mapped header is absent.
    MalformedRow
        A field fails numeric conversion; ``line_no`` counts the header as line 1.
    DuplicateSample
        The same (vehicle, frame) appears twice.
    """
    cfg = cfg or IngestConfig()
    df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    df.columns = [c.strip() for c in df.columns]
    for name in REQUIRED_FIELDS:
        if cfg.header(name) not in df.columns:
            raise MissingColumn(cfg.header(name))
    first_line = 2
    n = len(df)

    def col(name):
        return df[cfg.header(name)].str.strip().to_numpy(dtype=object) if cfg.header(name) in df.columns else None

    ids = col("id")
    for i in np.flatnonzero(ids == ""):
        raise MalformedRow(first_line + int(i), "empty id")
    frame_f = _to_float(col("frame"), cfg.header("frame"), first_line)
    bad = np.flatnonzero(frame_f != np.round(frame_f))
    if bad.size:
        raise MalformedRow(first_line + int(bad[0]), f"non-integer frame {frame_f[bad[0]]!r}")
    frames = frame_f.astype(np.int64)
    data = {k: _to_float(col(k), cfg.header(k), first_line) for k in ("x", "y", "vx", "vy")}
    heading_raw = col("heading")
    if heading_raw is not None:
        heading = _to_float(heading_raw, cfg.header("heading"), first_line, allow_empty=True)
        missing = heading_raw == ""
        heading = np.where(missing, np.arctan2(data["vy"], data["vx"]), heading) if missing.any() else heading
    else:
        heading = np.arctan2(data["vy"], data["vx"])
    sizes = {}
    for k, default in (("length", DEFAULT_VEHICLE_LENGTH), ("width", DEFAULT_VEHICLE_WIDTH)):
        raw = col(k)
        if raw is None:
            sizes[k] = np.full(n, default)
        else:
            vals = _to_float(np.where(raw == "", str(default), raw), cfg.header(k), first_line)
            bad = np.flatnonzero(vals <= 0)
            if bad.size:
                raise MalformedRow(first_line + int(bad[0]), f"non-positive {k}")
            sizes[k] = vals
    lane_raw = col("lane")
    lanes = np.array([v if v != "" else None for v in lane_raw], dtype=object) if lane_raw is not None else np.full(n, None, dtype=object)

    tracks = {}
    if n:
        _, codes = np.unique(ids.astype(str), return_inverse=True)
        order = np.lexsort((frames, codes))
        ids_s = codes[order]
        frames_s = frames[order]
        dup = np.flatnonzero((ids_s[1:] == ids_s[:-1]) & (frames_s[1:] == frames_s[:-1]))
        if dup.size:
            j = dup[0] + 1
            raise DuplicateSample(str(ids[order[j]]), int(frames_s[j]))
        bounds = np.flatnonzero(ids_s[1:] != ids_s[:-1]) + 1
        for idx in np.split(order, bounds):
            vid = str(ids[idx[0]])
            tracks[vid] = Track(
                vehicle_id=vid,
                length=float(sizes["length"][idx[0]]),
                width=float(sizes["width"][idx[0]]),
                frames=frames[idx],
                x=data["x"][idx], y=data["y"][idx],
                vx=data["vx"][idx], vy=data["vy"][idx],
                heading=heading[idx],
                lane=lanes[idx],
                dt=cfg.input_dt,
            )
    return TrackSet(dt=cfg.input_dt, tracks=tracks)


def write_tracks(ts, path, cfg=None):
    """Write the normalized CSV. Floats use ``repr`` so parsing restores them bit for bit."""
    cfg = cfg or IngestConfig()
    names = ("frame", "id", "x", "y", "vx", "vy", "heading", "length", "width", "lane")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([cfg.header(k) for k in names])
        for tr in ts.tracks.values():
            length, width = repr(float(tr.length)), repr(float(tr.width))
            for f, x, y, vx, vy, h, ln in zip(tr.frames.tolist(), tr.x.tolist(), tr.y.tolist(), tr.vx.tolist(),
                                             tr.vy.tolist(), tr.heading.tolist(), tr.lane):
                w.writerow([f, tr.vehicle_id, repr(x), repr(y), repr(vx), repr(vy), repr(h), length, width,
                            "" if ln is None else ln])


# ---------------------------------------------------------------------------
# resampling / smoothing
# ---------------------------------------------------------------------------

def centered_moving_average(a, window):
    """Centered moving average whose window shrinks symmetrically at the ends.

    The first and last samples pass through unchanged and linear signals are
    reproduced exactly.
    """
    a = np.asarray(a, dtype=float)
    n = len(a)
    if window <= 1 or n < 3:
        return a.copy()
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(a)])
    idx = np.arange(n)
    k = np.minimum(np.minimum(idx, n - 1 - idx), half)
    out = (c[idx + k + 1] - c[idx - k]) / (2 * k + 1)
    out[k == 0] = a[k == 0]  # cumsum differences are not exact at the ends
    return out


def _grid_frames(t0_frames, t1_frames, ratio):
    """Target frame indices covering source times given in target-frame units."""
    lo = t0_frames
    hi = t1_frames
    lo_r = round(lo)
    hi_r = round(hi)
    k0 = lo_r if abs(lo - lo_r) < 1e-9 else math.ceil(lo)
    k1 = hi_r if abs(hi - hi_r) < 1e-9 else math.floor(hi)
    return np.arange(k0, k1 + 1, dtype=np.int64)


def _resample_piece(tr, sel, src_dt, dt, window, vid):
    frames = tr.frames[sel]
    ratio = src_dt / dt
    same = ratio == 1.0
    pos = frames.astype(float) if same else frames * ratio  # source times in target-frame units
    grid = _grid_frames(pos[0], pos[-1], ratio)
    if len(grid) == 0:
        return None
    if same and len(grid) == len(frames) and np.array_equal(grid, frames):
        x, y, vx, vy, heading = (getattr(tr, k)[sel].copy() for k in ("x", "y", "vx", "vy", "heading"))
        lane = tr.lane[sel].copy()
    else:
        q = grid.astype(float)
        x, y, vx, vy = (np.interp(q, pos, getattr(tr, k)[sel]) for k in ("x", "y", "vx", "vy"))
        heading = np.interp(q, pos, np.unwrap(tr.heading[sel]))
        heading = np.pi - np.mod(np.pi - heading, 2.0 * np.pi)
        j = np.clip(np.searchsorted(pos, q + 1e-9, side="right") - 1, 0, len(pos) - 1)
        lane = tr.lane[sel][j]
    if window > 1:
        x, y, vx, vy = (centered_moving_average(v, window) for v in (x, y, vx, vy))
    return Track(vid, tr.length, tr.width, grid, x, y, vx, vy, heading, lane, dt=dt)


def resample_and_smooth(ts, cfg=None):
    """Resample every track onto ``cfg.dt`` and smooth positions and velocities.

    Missing stretches shorter than ``cfg.max_fill_gap`` seconds are filled by
    interpolation; longer ones split the track into ``<id>_1``, ``<id>_2``, ...
    """
    cfg = cfg or IngestConfig()
    out = {}
    for vid, tr in ts.tracks.items():
        if len(tr) < 2:
            raise TrackTooShort(vid)
        missing = (np.diff(tr.frames) - 1) * ts.dt
        cuts = np.flatnonzero(missing > cfg.max_fill_gap + 1e-9) + 1
        pieces = np.split(np.arange(len(tr)), cuts)
        for k, sel in enumerate(pieces):
            name = vid if len(pieces) == 1 else f"{vid}_{k + 1}"
            if len(sel) < 2:
                logger.warning("dropping single-sample fragment %s", name)
                continue
            piece = _resample_piece(tr, sel, ts.dt, cfg.dt, cfg.smoothing_window, name)
            if piece is None or len(piece) < 1:
                logger.warning("fragment %s shorter than one target frame, dropped", name)
                continue
            out[name] = piece
    return TrackSet(dt=cfg.dt, tracks=out)


def load_tracks(path, cfg=None):
    """Parse, resample and smooth in one call."""
    cfg = cfg or IngestConfig()
    return resample_and_smooth(parse_tracks(path, cfg), cfg)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    kind: str  # out_of_corridor | lane_mismatch | unknown_lane | speed_outlier
    vehicle_id: str
    frame: int
    detail: str


@dataclass
class ValidationReport:
    findings: list

    def __len__(self):
        return len(self.findings)

    def __bool__(self):
        return bool(self.findings)

    def by_kind(self, kind):
        return [f for f in self.findings if f.kind == kind]

    def to_dict(self):
        return {"findings": [{f.name: getattr(x, f.name) for f in fields(Finding)} for x in self.findings]}


def nearest_lanes(road_map, x, y):
    """Nearest lane index, Euclidean distance and corridor half width per point."""
    lanes = list(road_map.lanes.values())
    dist = np.empty((len(lanes), len(x)))
    for i, lane in enumerate(lanes):
        s, _, _, _ = lane.centerline.project(x, y)
        px, py, _, _ = lane.centerline.interpolate(s)
        dist[i] = np.hypot(x - px, y - py)
    best = np.argmin(dist, axis=0)
    cols = np.arange(len(x))
    half = np.array([lane.width / 2.0 for lane in lanes])
    return best, dist[best, cols], half[best]


def validate(ts, road_map, tolerance=0.5, max_speed=70.0):
    """Report positions outside every lane corridor, lane tag mismatches and speed outliers.

    Inputs are never modified. A point outside all corridors is reported once,
    as ``out_of_corridor``, and is not also checked for a lane mismatch.
    """
    findings = []
    ids = road_map.lane_ids
    for vid, tr in ts.tracks.items():
        if len(tr) == 0:
            continue
        best, dist, half = nearest_lanes(road_map, tr.x, tr.y)
        off = dist > half + tolerance
        for i in np.flatnonzero(off):
            findings.append(Finding("out_of_corridor", vid, int(tr.frames[i]),
                                    f"{dist[i] - half[i]:.3f} m outside lane {ids[best[i]]}"))
        for i in np.flatnonzero(~off):
            tag = tr.lane[i]
            if tag is None:
                continue
            if str(tag) not in road_map.lanes:
                findings.append(Finding("unknown_lane", vid, int(tr.frames[i]), f"lane {tag!r} not in map"))
            elif str(tag) != ids[best[i]]:
                findings.append(Finding("lane_mismatch", vid, int(tr.frames[i]),
                                        f"tagged {tag}, nearest {ids[best[i]]}"))
        speed = tr.speed
        for i in np.flatnonzero(speed > max_speed):
            findings.append(Finding("speed_outlier", vid, int(tr.frames[i]), f"speed {speed[i]:.2f} m/s"))
    return ValidationReport(findings)
