"""Planar polyline helpers shared by the map, slicing and generator code."""

from __future__ import annotations

import numpy as np


class Polyline:
    """Piecewise-linear curve with cumulative arc length.

    Parameters
    ----------
    points : array_like, shape (k, 2)
        Vertices in travel order. Consecutive duplicates are dropped.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2D points")
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(np.diff(pts, axis=0) != 0.0, axis=1)
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("polyline is degenerate (all points coincide)")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self._seg = seg
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self._seg_dir = seg / self._seg_len[:, None]
        self.arc = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self.length = float(self.arc[-1])

    def project(self, x, y):
        """Project points onto the curve.

        Returns
        -------
        s : ndarray
            Arc position of the foot point, clamped to ``[0, length]``.
        d : ndarray
            Signed lateral offset, positive to the left of the travel direction.
        tx, ty : ndarray
            Unit tangent at the foot point.
        """
        px = np.atleast_1d(np.asarray(x, dtype=float))
        py = np.atleast_1d(np.asarray(y, dtype=float))
        chunk = max(1, 4_000_000 // len(self._seg_len))
        if len(px) > chunk:
            parts = [self.project(px[i:i + chunk], py[i:i + chunk]) for i in range(0, len(px), chunk)]
            return tuple(np.concatenate(p) for p in zip(*parts))
        a = self.points[:-1]
        # (n_pts, n_seg) relative coordinates
        rx = px[:, None] - a[None, :, 0]
        ry = py[:, None] - a[None, :, 1]
        ux = self._seg_dir[None, :, 0]
        uy = self._seg_dir[None, :, 1]
        along = np.clip(rx * ux + ry * uy, 0.0, self._seg_len[None, :])
        fx = rx - along * ux
        fy = ry - along * uy
        dist2 = fx * fx + fy * fy
        best = np.argmin(dist2, axis=1)
        rows = np.arange(len(px))
        s = self.arc[best] + along[rows, best]
        tx = self._seg_dir[best, 0]
        ty = self._seg_dir[best, 1]
        # cross(t, r) is positive when the point lies to the left
        d = tx * ry[rows, best] - ty * rx[rows, best]
        return s, d, tx, ty

    def interpolate(self, s):
        """Points and unit tangents at arc positions ``s`` (extrapolated linearly)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        idx = np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self._seg_len) - 1)
        off = s - self.arc[idx]
        tx = self._seg_dir[idx, 0]
        ty = self._seg_dir[idx, 1]
        x = self.points[idx, 0] + off * tx
        y = self.points[idx, 1] + off * ty
        return x, y, tx, ty


def wrap_angle(a):
    """Wrap angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def angle_diff(a, b):
    """Absolute angular difference in ``[0, pi]``."""
    return np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))
