"""Camera calibration and image/ground-plane conversion.

A pinhole camera maps homogeneous world points to pixels through a 3x4
matrix M. M is estimated from 2D-3D correspondences by the direct
linear transformation: each correspondence contributes two rows to a
2n x 12 system whose least-squares null vector (smallest singular
vector) is the stacked matrix. Input coordinates are conditioned with
the standard isotropic normalization before the solve.

Pedestrian positions are recovered by intersecting the viewing ray of a
pixel with a horizontal plane Z = z (z is half the assumed body height,
so the mid-body point of a detection box lands on the ground track).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CalibrationError,
    DegenerateConfiguration,
    PointAtInfinity,
    SingularA,
    TooFewPoints,
)

MIN_POINTS = 6

# rank-deficiency threshold relative to the largest singular value; the
# design matrix legitimately has one vanishing singular value, anything
# further below this is a degenerate point configuration
_RANK_RTOL = 1e-9

_INF_RTOL = 1e-12


@dataclass(frozen=True)
class Correspondence:
    """One calibration point: world position in meters, pixel position."""

    world: tuple
    pixel: tuple


class ProjectionMatrix:
    """3x4 camera matrix with a canonical scale.

    The projective scale is fixed by normalizing to unit Frobenius norm
    with the largest-magnitude entry positive, so equal cameras compare
    equal bitwise.
    """

    def __init__(self, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("projection matrix has non-finite entries")
        norm = np.linalg.norm(m)
        if norm == 0.0:
            raise ValueError("projection matrix is zero")
        m = m / norm
        flat = np.abs(m).argmax()
        if m.flat[flat] < 0:
            m = -m
        if np.linalg.matrix_rank(m) < 3:
            raise ValueError("projection matrix is rank-deficient")
        self._m = m
        self._m.setflags(write=False)

    @property
    def m(self) -> np.ndarray:
        return self._m

    def __repr__(self):
        return f"ProjectionMatrix({self._m.tolist()!r})"

    def __eq__(self, other):
        if not isinstance(other, ProjectionMatrix):
            return NotImplemented
        return np.array_equal(self._m, other._m)


def _as_arrays(points: Iterable) -> tuple:
    world, pixel = [], []
    for p in points:
        if isinstance(p, Correspondence):
            world.append(p.world)
            pixel.append(p.pixel)
        else:
            w, px = p
            world.append(w)
            pixel.append(px)
    return (np.asarray(world, dtype=np.float64),
            np.asarray(pixel, dtype=np.float64))


def _normalizing_transform(x: np.ndarray) -> np.ndarray:
    """Similarity transform sending the centroid to the origin and the
    mean distance from it to sqrt(dim). x is (n, dim)."""
    dim = x.shape[1]
    centroid = x.mean(axis=0)
    dist = np.linalg.norm(x - centroid, axis=1).mean()
    if dist < 1e-12:
        raise DegenerateConfiguration("calibration points are coincident")
    s = np.sqrt(dim) / dist
    t = np.eye(dim + 1)
    t[:dim, :dim] *= s
    t[:dim, dim] = -s * centroid
    return t


def calibrate_dlt(points: Sequence) -> ProjectionMatrix:
    """Estimate the camera matrix from world/pixel correspondences.

    Needs at least six points in a non-degenerate configuration (not all
    coplanar, not collinear). Raises TooFewPoints or
    DegenerateConfiguration accordingly.
    """
    world, pixel = _as_arrays(points)
    n = len(world)
    if n < MIN_POINTS:
        raise TooFewPoints(f"need at least {MIN_POINTS} correspondences, got {n}")
    if world.shape != (n, 3) or pixel.shape != (n, 2):
        raise CalibrationError("points must pair a 3D world and a 2D pixel position")
    if not (np.all(np.isfinite(world)) and np.all(np.isfinite(pixel))):
        raise CalibrationError("calibration points contain non-finite values")

    t_w = _normalizing_transform(world)
    t_px = _normalizing_transform(pixel)
    wh = np.hstack([world, np.ones((n, 1))]) @ t_w.T
    ph = np.hstack([pixel, np.ones((n, 1))]) @ t_px.T

    a = np.zeros((2 * n, 12))
    a[0::2, 0:4] = wh
    a[0::2, 8:12] = -ph[:, :1] * wh
    a[1::2, 4:8] = wh
    a[1::2, 8:12] = -ph[:, 1:2] * wh

    _, sv, vt = np.linalg.svd(a)
    # one vanishing singular value is the solution; a second one means
    # the points do not pin the camera down
    if sv[10] <= _RANK_RTOL * sv[0]:
        raise DegenerateConfiguration(
            "point configuration does not determine the camera "
            f"(singular value ratio {sv[10] / sv[0]:.2e})")
    m_norm = vt[-1].reshape(3, 4)
    m = np.linalg.inv(t_px) @ m_norm @ t_w
    return ProjectionMatrix(m)


def project(matrix: ProjectionMatrix, world) -> tuple:
    """World point (meters) -> pixel (u, v). Raises PointAtInfinity when
    the point lies on the camera's principal plane."""
    x, y, z = (float(v) for v in world)
    xh = np.array([x, y, z, 1.0])
    uvw = matrix.m @ xh
    if abs(uvw[2]) <= _INF_RTOL * np.linalg.norm(xh):
        raise PointAtInfinity(f"world point {world!r} projects to infinity")
    return (uvw[0] / uvw[2], uvw[1] / uvw[2])


def pixel_to_plane(matrix: ProjectionMatrix, pixel, z: float = 0.0) -> tuple:
    """Pixel (u, v) -> world (X, Y) on the horizontal plane Z = z.

    Eliminating the projective scale from u = (m1.x)/(m3.x) and
    v = (m2.x)/(m3.x) gives a 2x2 linear system in (X, Y); it is
    singular when the viewing ray is parallel to the plane.
    """
    u, v = (float(c) for c in pixel)
    m = matrix.m
    c = np.outer([u, v], m[2]) - m[:2]
    a = c[:, :2]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    scale = np.abs(a).max() ** 2
    if abs(det) <= 1e-12 * scale or scale == 0.0:
        raise SingularA(f"pixel {pixel!r} has no unique preimage on Z={z}")
    b = -(c[:, 2] * z + c[:, 3])
    x = (b[0] * a[1, 1] - b[1] * a[0, 1]) / det
    y = (a[0, 0] * b[1] - a[1, 0] * b[0]) / det
    return (x, y)


def reprojection_errors(matrix: ProjectionMatrix, points: Sequence) -> np.ndarray:
    """Pixel distance between each correspondence and its reprojection."""
    world, pixel = _as_arrays(points)
    err = np.empty(len(world))
    for k in range(len(world)):
        uv = project(matrix, world[k])
        err[k] = np.hypot(uv[0] - pixel[k, 0], uv[1] - pixel[k, 1])
    return err
