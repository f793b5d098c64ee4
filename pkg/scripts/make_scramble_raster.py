"""Regenerate the walkability raster shipped with the scramble scenario.

Run from the repository root:

    python scripts/make_scramble_raster.py
"""

from pathlib import Path

import numpy as np

from pedflow.raster import EnvironmentRaster, paint_disc, paint_rect, write_raster

OUT = Path(__file__).resolve().parent.parent / "src" / "pedflow" / "data"

CELL = 0.5
X0, X1 = -26.0, 44.0
Y0, Y1 = -13.0, 13.0

PLAZA = 1.0
CROSSWALK = 0.8
ROAD = 0.25


def build() -> EnvironmentRaster:
    w = int(round((X1 - X0) / CELL)) + 1
    h = int(round((Y1 - Y0) / CELL)) + 1
    r = EnvironmentRaster(grid=np.zeros((h, w)), origin=(X0, Y0), meters_per_cell=CELL)
    # west and east plazas
    paint_rect(r, (X0, -9.0), (-0.5, 9.0), PLAZA)
    paint_rect(r, (16.5, -9.0), (X1, 9.0), PLAZA)
    # the road separating them, with the marked crossing band
    paint_rect(r, (0.0, -9.0), (16.0, 9.0), ROAD)
    paint_rect(r, (0.0, -4.0), (16.0, 4.0), CROSSWALK)
    # make sure spawn pockets are comfortably walkable
    for c in ((-21.0, -5.0), (-21.0, 0.0), (-21.0, 5.0),
              (37.0, -7.0), (39.0, 0.0), (37.0, 7.0)):
        paint_disc(r, c, 4.0, PLAZA)
    return r


if __name__ == "__main__":
    raster = build()
    write_raster(raster, OUT / "scramble_raster.csv")
    print(f"wrote {OUT / 'scramble_raster.csv'} {raster.grid.shape}")
