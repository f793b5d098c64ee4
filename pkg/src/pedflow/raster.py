"""Walkability rasters.

A raster is a regular grid of walkability weights in [0, 1] covering the
scene: 1 for freely walkable ground, intermediate values for crossable
road surface, 0 for obstacles and out-of-bounds. Stored as a plain CSV
grid next to a small JSON sidecar holding the georeferencing (world
position of the first cell center and the cell size). Row 0 sits at the
origin and row indices grow toward +y; columns grow toward +x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ScenarioError


@dataclass
class EnvironmentRaster:
    grid: np.ndarray
    origin: tuple
    meters_per_cell: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2 or min(self.grid.shape) < 2:
            raise ScenarioError("raster grid must be 2D with at least 2x2 cells")
        if not np.all(np.isfinite(self.grid)):
            raise ScenarioError("raster grid contains non-finite values")
        if self.grid.min() < 0.0 or self.grid.max() > 1.0:
            raise ScenarioError("raster values must lie in [0, 1]")
        if not (np.isfinite(self.meters_per_cell) and self.meters_per_cell > 0):
            raise ScenarioError("raster cell size must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Bilinear walkability at world points (n, 2); 0 outside the grid."""
        pts = np.asarray(points, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        gx = (flat[:, 0] - self.origin[0]) / self.meters_per_cell
        gy = (flat[:, 1] - self.origin[1]) / self.meters_per_cell
        h, w = self.grid.shape
        j0 = np.floor(gx).astype(np.int64)
        i0 = np.floor(gy).astype(np.int64)
        fx = gx - j0
        fy = gy - i0
        vals = np.zeros(len(flat))
        for di, dj, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                            (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            ii = i0 + di
            jj = j0 + dj
            ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
            vals[ok] += wgt[ok] * self.grid[ii[ok], jj[ok]]
        return vals.reshape(pts.shape[:-1])


def _sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".json")


def load_raster(csv_path) -> EnvironmentRaster:
    csv_path = Path(csv_path)
    side = _sidecar_path(csv_path)
    if not csv_path.exists():
        raise ScenarioError(f"raster file not found: {csv_path}")
    if not side.exists():
        raise ScenarioError(f"raster sidecar not found: {side}")
    try:
        grid = np.loadtxt(csv_path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ScenarioError(f"raster CSV unreadable: {exc}") from exc
    meta = json.loads(side.read_text())
    for key in ("origin", "meters_per_cell"):
        if key not in meta:
            raise ScenarioError(f"raster sidecar missing {key!r}")
    return EnvironmentRaster(grid=grid, origin=tuple(meta["origin"]),
                             meters_per_cell=float(meta["meters_per_cell"]))


def write_raster(raster: EnvironmentRaster, csv_path) -> None:
    csv_path = Path(csv_path)
    np.savetxt(csv_path, raster.grid, delimiter=",", fmt="%.4f")
    meta = {"meters_per_cell": raster.meters_per_cell,
            "origin": list(raster.origin)}
    _sidecar_path(csv_path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def paint_rect(raster: EnvironmentRaster, lo, hi, value: float) -> None:
    """Set cells whose centers fall in the axis-aligned box [lo, hi]."""
    h, w = raster.grid.shape
    xs = raster.origin[0] + np.arange(w) * raster.meters_per_cell
    ys = raster.origin[1] + np.arange(h) * raster.meters_per_cell
    cols = (xs >= lo[0]) & (xs <= hi[0])
    rows = (ys >= lo[1]) & (ys <= hi[1])
    raster.grid[np.ix_(rows, cols)] = value


def paint_disc(raster: EnvironmentRaster, center, radius: float, value: float) -> None:
    h, w = raster.grid.shape
    xs = raster.origin[0] + np.arange(w) * raster.meters_per_cell
    ys = raster.origin[1] + np.arange(h) * raster.meters_per_cell
    dx2 = (xs - center[0]) ** 2
    dy2 = (ys - center[1]) ** 2
    mask = dy2[:, None] + dx2[None, :] <= radius * radius
    raster.grid[mask] = value
