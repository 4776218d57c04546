"""Crack severity from a binary mask: count, area and maximum width."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import label8, sq_distance_to_fast

CALIBRATION_MM_PER_PX = 0.43


def connected_components(mask) -> tuple[np.ndarray, int]:
    """8-connected labels (raster-order ids) and the component count."""
    return label8(mask)


# Zhang-Suen neighbour order P2..P9, clockwise from north
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _ring(m: np.ndarray) -> list[np.ndarray]:
    p = np.pad(m, 1)
    h, w = m.shape
    return [p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx in _RING]


def skeletonize(mask, depth: np.ndarray | None = None) -> np.ndarray:
    """Zhang-Suen thinning (two sub-iterations per pass until stable),
    anchored at each component's deepest pixel.

    Plain Zhang-Suen wipes out 2x2 blocks, which is what a disc shrinks to,
    and may leave a blob's last pixel off-centre. The anchor (first pixel in
    raster order with the component's largest distance value) is never
    deleted, so the component count is preserved and the skeleton passes
    through the widest point. ``depth`` may pass a precomputed
    :func:`distance_transform` of ``mask``.
    """
    m = np.asarray(mask, dtype=bool).copy()
    anchors = np.zeros_like(m)
    labels, n = label8(m)
    if n:
        depth = distance_transform(m) if depth is None else depth
        for k in range(1, n + 1):
            d = np.where(labels == k, depth, -1.0)
            anchors[np.unravel_index(np.argmax(d), d.shape)] = True
    while True:
        changed = False
        for first in (True, False):
            P = _ring(m)
            nb = sum(q.astype(np.int8) for q in P)
            # 0 -> 1 transitions around the ring
            trans = sum((~P[i] & P[(i + 1) % 8]).astype(np.int8) for i in range(8))
            p2, p4, p6, p8 = P[0], P[2], P[4], P[6]
            if first:
                c = ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
            else:
                c = ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
            kill = m & ~anchors & (nb >= 2) & (nb <= 6) & (trans == 1) & c
            if kill.any():
                m &= ~kill
                changed = True
        if not changed:
            return m


def distance_transform(mask) -> np.ndarray:
    """Euclidean distance from each foreground pixel to the nearest background
    pixel centre; the area outside the grid is background, so a pixel with a
    background 4-neighbour (or on the border) is at distance 1."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(~m, 1, constant_values=True)
    d = np.sqrt(sq_distance_to_fast(padded))[1:-1, 1:-1]
    return np.where(m, d, 0.0)


def max_width(mask, calibration: float = CALIBRATION_MM_PER_PX) -> tuple[float, float]:
    """``2 * d_max - 1`` pixels, ``d_max`` the largest distance on the skeleton."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return 0.0, 0.0
    d = distance_transform(m)
    px = 2.0 * float(d[skeletonize(m, d)].max()) - 1.0
    return px, px * calibration


@dataclass
class SeverityReport:
    cpp: int
    area_px: int
    area_fraction: float
    max_width_px: float
    max_width_mm: float
    calibration_mm_per_px: float = CALIBRATION_MM_PER_PX


def severity_report(mask, calibration: float = CALIBRATION_MM_PER_PX) -> SeverityReport:
    m = np.asarray(mask, dtype=bool)
    _, n = label8(m)
    area = int(m.sum())
    px, mm = max_width(m, calibration)
    return SeverityReport(n, area, area / m.size, px, mm, calibration)


REPORT_FIELDS = ("image_id", "cpp", "area_px", "area_fraction", "width_px", "width_mm")


def write_reports(path, rows: list[tuple[str, SeverityReport]], truth: dict | None = None) -> None:
    """One CSV row per mask; with ``truth`` (id -> report) adds absolute and
    percentage errors per metric."""
    header = list(REPORT_FIELDS)
    if truth is not None:
        for k in ("cpp", "area_px", "width_px"):
            header += [f"{k}_true", f"{k}_abs_err", f"{k}_pct_err"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for image_id, r in rows:
            row = [image_id, r.cpp, r.area_px, f"{r.area_fraction:.6f}", f"{r.max_width_px:.3f}",
                   f"{r.max_width_mm:.3f}"]
            if truth is not None:
                t = truth[image_id]
                for est, true in ((r.cpp, t.cpp), (r.area_px, t.area_px), (r.max_width_px, t.max_width_px)):
                    pct = f"{abs(est - true) / abs(true) * 100:.3f}" if true else ""
                    row += [f"{true:.3f}" if isinstance(true, float) else true, f"{abs(est - true):.3f}", pct]
            w.writerow(row)
