"""Shape statistics and piecewise-affine warping between landmark sets.

Shapes are 68 ordered (x, y) landmark points in pixel coordinates.
Warping reuses one Delaunay triangulation (computed on a reference
shape) for every landmark configuration, which keeps the mesh topology
consistent across faces.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DegenerateShape, EmptyInput, ShapeError

log = logging.getLogger(__name__)

NUM_LANDMARKS = 68

# Fraction of the canonical frame left as margin around the mean shape.
FRAME_MARGIN = 0.05


@dataclass(frozen=True)
class Shape:
    """68 landmark points, shape (68, 2), columns (x, y)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (NUM_LANDMARKS, 2):
            raise ShapeError("expected %d (x, y) points, got array of shape %s"
                             % (NUM_LANDMARKS, (pts.shape,)))
        if not np.all(np.isfinite(pts)):
            raise DegenerateShape("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        return isinstance(other, Shape) and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: float  # radians
    translation: tuple  # (tx, ty) px

    def matrix(self):
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points):
        return np.asarray(points) @ self.matrix().T + np.asarray(self.translation)


@dataclass(frozen=True)
class Triangulation:
    """Index triples into a 68-point shape."""

    triangles: np.ndarray

    def __post_init__(self):
        tri = np.asarray(self.triangles, dtype=int)
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise ShapeError("triangles must be an array of index triples")
        if tri.min() < 0 or tri.max() >= NUM_LANDMARKS:
            raise ShapeError("triangle indices out of range")
        object.__setattr__(self, "triangles", tri)


def _fit_similarity(src_pts, dst_pts):
    """Least-squares similarity (no reflection) mapping src toward dst."""
    src = np.asarray(src_pts, dtype=float)
    dst = np.asarray(dst_pts, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sc = src - mu_s
    dc = dst - mu_d
    var_s = (sc ** 2).sum() / len(src)
    if var_s <= 0.0:
        raise DegenerateShape("cannot align a shape whose points all coincide")
    cov = dc.T @ sc / len(src)
    u, d, vt = np.linalg.svd(cov)
    sgn = np.sign(np.linalg.det(u @ vt))
    corr = np.array([1.0, sgn if sgn != 0 else 1.0])
    rot = u @ np.diag(corr) @ vt
    scale = (d * corr).sum() / var_s
    if scale <= 0.0:
        raise DegenerateShape("degenerate similarity fit (nonpositive scale)")
    trans = mu_d - scale * (rot @ mu_s)
    angle = float(np.arctan2(rot[1, 0], rot[0, 0]))
    return SimilarityTransform(float(scale), angle, (float(trans[0]), float(trans[1])))


def similarity_align(shape, reference):
    """Align ``shape`` to ``reference``; returns (aligned shape, transform)."""
    tf = _fit_similarity(shape.points, reference.points)
    return Shape(tf.apply(shape.points)), tf


def fit_to_frame(points, frame_size):
    """Similarity-rescale points so their bounding box fills the frame
    centred, with a FRAME_MARGIN border.  Aspect ratio is preserved."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if extent <= 0.0:
        raise DegenerateShape("shape has zero extent")
    span = (frame_size - 1) * (1.0 - 2.0 * FRAME_MARGIN)
    scale = span / extent
    centre = (frame_size - 1) / 2.0
    mid = (lo + hi) / 2.0
    return (pts - mid) * scale + centre


def mean_shape(shapes, frame_size=100, tol=1e-8, max_iter=100):
    """Generalized Procrustes mean of a list of shapes.

    Iteratively aligns every shape to the running mean and re-averages
    until the mean moves less than ``tol`` px.  The result is rescaled
    so its bounding box fits the ``frame_size`` canonical frame.
    """
    if not shapes:
        raise EmptyInput("mean_shape requires at least one shape")
    mean = shapes[0].points.copy()
    mean -= mean.mean(axis=0)
    norm = np.sqrt((mean ** 2).sum())
    if norm <= 0.0:
        raise DegenerateShape("degenerate first shape")
    mean /= norm
    for _ in range(max_iter):
        aligned = [_fit_similarity(s.points, mean).apply(s.points) for s in shapes]
        new_mean = np.mean(aligned, axis=0)
        new_mean -= new_mean.mean(axis=0)
        nn = np.sqrt((new_mean ** 2).sum())
        if nn <= 0.0:
            raise DegenerateShape("mean collapsed to a point")
        new_mean /= nn
        moved = np.abs(new_mean - mean).max()
        mean = new_mean
        if moved < tol:
            break
    return Shape(fit_to_frame(mean, frame_size))


def delaunay_triangles(points):
    """Delaunay simplices of a generic 2-d point set."""
    try:
        return Delaunay(np.asarray(points, dtype=float)).simplices.copy()
    except QhullError as exc:
        raise DegenerateShape("points do not span the plane") from exc


def triangulate(shape):
    return Triangulation(delaunay_triangles(shape.points))


class WarpField:
    """Precomputed pixel correspondence for one (src, dst) shape pair.

    Building the field is the expensive part of a warp; ``apply`` then
    resamples any number of images through the same correspondence.
    """

    def __init__(self, src, dst, tri, out_size):
        h, w = out_size
        src_pts = src.points
        dst_pts = dst.points
        identical = np.array_equal(src_pts, dst_pts)

        owner = np.full((h, w), -1, dtype=int)
        src_x = np.zeros((h, w))
        src_y = np.zeros((h, w))
        eps = 1e-9
        for t, (i0, i1, i2) in enumerate(tri.triangles):
            d0, d1, d2 = dst_pts[i0], dst_pts[i1], dst_pts[i2]
            det = (d1[1] - d2[1]) * (d0[0] - d2[0]) + (d2[0] - d1[0]) * (d0[1] - d2[1])
            if abs(det) < 1e-12:
                log.warning("skipping degenerate destination triangle %d", t)
                continue
            xs = np.arange(max(0, int(np.floor(min(d0[0], d1[0], d2[0])))),
                           min(w - 1, int(np.ceil(max(d0[0], d1[0], d2[0])))) + 1)
            ys = np.arange(max(0, int(np.floor(min(d0[1], d1[1], d2[1])))),
                           min(h - 1, int(np.ceil(max(d0[1], d1[1], d2[1])))) + 1)
            if xs.size == 0 or ys.size == 0:
                continue
            gx, gy = np.meshgrid(xs, ys)
            b0 = ((d1[1] - d2[1]) * (gx - d2[0]) + (d2[0] - d1[0]) * (gy - d2[1])) / det
            b1 = ((d2[1] - d0[1]) * (gx - d2[0]) + (d0[0] - d2[0]) * (gy - d2[1])) / det
            b2 = 1.0 - b0 - b1
            inside = (b0 >= -eps) & (b1 >= -eps) & (b2 >= -eps)
            free = owner[gy, gx] < 0
            take = inside & free
            if not take.any():
                continue
            ty, tx = gy[take], gx[take]
            owner[ty, tx] = t
            if identical:
                src_x[ty, tx] = tx
                src_y[ty, tx] = ty
            else:
                s0, s1, s2 = src_pts[i0], src_pts[i1], src_pts[i2]
                src_x[ty, tx] = b0[take] * s0[0] + b1[take] * s1[0] + b2[take] * s2[0]
                src_y[ty, tx] = b0[take] * s0[1] + b1[take] * s1[1] + b2[take] * s2[1]

        self.out_size = (h, w)
        self.mask = owner >= 0
        self._iy, self._ix = np.nonzero(self.mask)
        self._sx = src_x[self.mask]
        self._sy = src_y[self.mask]

    def apply(self, image):
        """Bilinearly resample ``image`` (HxW or HxWxC float) into the
        destination frame; pixels outside the hull are zero."""
        img = np.asarray(image, dtype=float)
        ih, iw = img.shape[:2]
        sx = np.clip(self._sx, 0.0, iw - 1.0)
        sy = np.clip(self._sy, 0.0, ih - 1.0)
        x0 = np.floor(sx).astype(int)
        y0 = np.floor(sy).astype(int)
        x1 = np.minimum(x0 + 1, iw - 1)
        y1 = np.minimum(y0 + 1, ih - 1)
        fx = sx - x0
        fy = sy - y0
        if img.ndim == 3:
            fx = fx[:, None]
            fy = fy[:, None]
        vals = (img[y0, x0] * (1.0 - fx) * (1.0 - fy)
                + img[y0, x1] * fx * (1.0 - fy)
                + img[y1, x0] * (1.0 - fx) * fy
                + img[y1, x1] * fx * fy)
        out_shape = self.out_size + img.shape[2:]
        out = np.zeros(out_shape, dtype=float)
        out[self._iy, self._ix] = vals
        return out


def warp(image, src, dst, tri, out_size=None):
    """Warp ``image`` from the src landmark configuration to dst.

    Returns (raster, hull_mask); pixels outside the destination hull are
    zero in the raster and False in the mask.
    """
    img = np.asarray(image, dtype=float)
    if out_size is None:
        out_size = img.shape[:2]
    field = WarpField(src, dst, tri, out_size)
    return field.apply(img), field.mask


def shape_age(s_subject, s_input_mean, s_target_mean):
    """Shift a subject's landmarks by the (target - input) group-mean
    profile delta, expressed in the subject's own frame."""
    tf = _fit_similarity(s_input_mean.points, s_subject.points)
    mapped_input = tf.apply(s_input_mean.points)
    mapped_target = tf.apply(s_target_mean.points)
    return Shape(s_subject.points + (mapped_target - mapped_input))
