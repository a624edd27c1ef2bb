import numpy as np
import pytest

from faceaging import geometry
from faceaging.errors import DegenerateShape, EmptyInput, ShapeError
from faceaging.geometry import (Shape, WarpField, fit_to_frame, mean_shape,
                                shape_age, similarity_align, triangulate, warp)
from faceaging.synthval import synthetic_face_landmarks


def _base_shape(frame=64):
    return synthetic_face_landmarks(frame)


def _transform(points, scale, angle, tx, ty):
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return points @ (scale * rot).T + np.array([tx, ty])


def test_shape_validation():
    with pytest.raises(ShapeError):
        Shape(np.zeros((10, 2)))
    with pytest.raises(DegenerateShape):
        Shape(np.full((68, 2), np.nan))


def test_similarity_align_recovers_transform():
    base = _base_shape()
    moved = Shape(_transform(base.points, 1.7, 0.4, 5.0, -3.0))
    aligned, tf = similarity_align(moved, base)
    assert np.allclose(aligned.points, base.points, atol=1e-8)
    assert tf.scale == pytest.approx(1.0 / 1.7)
    assert tf.rotation == pytest.approx(-0.4)


def test_similarity_align_degenerate():
    base = _base_shape()
    flat = Shape(np.tile([[3.0, 4.0]], (68, 1)))
    with pytest.raises(DegenerateShape):
        similarity_align(flat, base)


def test_fit_to_frame_span_and_centre():
    pts = fit_to_frame(_base_shape().points, 100)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = (hi - lo).max()
    assert span == pytest.approx(99.0 * 0.9)
    assert (lo + hi) / 2.0 == pytest.approx([49.5, 49.5])
    assert lo.min() >= 0.0 and hi.max() <= 99.0


def test_mean_shape_of_identical_shapes():
    base = _base_shape(100)
    mean = mean_shape([base] * 5, frame_size=100)
    assert np.allclose(mean.points, fit_to_frame(base.points, 100), atol=1e-6)


def test_mean_shape_recovers_base_under_noise():
    rng = np.random.default_rng(5)
    base = _base_shape(100)
    shapes = []
    for _ in range(60):
        noisy = base.points + 0.5 * rng.standard_normal((68, 2))
        shapes.append(Shape(_transform(noisy, rng.uniform(0.8, 1.2),
                                       rng.uniform(-0.3, 0.3),
                                       rng.uniform(-5, 5),
                                       rng.uniform(-5, 5))))
    mean = mean_shape(shapes, frame_size=100)
    target = Shape(fit_to_frame(base.points, 100))
    aligned, _ = similarity_align(mean, target)
    rms = np.sqrt(np.mean((aligned.points - target.points) ** 2))
    assert rms < 0.25


def test_mean_shape_empty():
    with pytest.raises(EmptyInput):
        mean_shape([])


def _shoelace(points):
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def test_triangulation_tiles_convex_hull():
    from scipy.spatial import ConvexHull
    base = _base_shape(100)
    tri = triangulate(base)
    total = 0.0
    for i0, i1, i2 in tri.triangles:
        total += _shoelace(base.points[[i0, i1, i2]])
    hull = ConvexHull(base.points)
    hull_area = _shoelace(base.points[hull.vertices])
    assert total == pytest.approx(hull_area, rel=1e-6)


def test_identity_warp_is_exact():
    rng = np.random.default_rng(0)
    base = _base_shape(48)
    tri = triangulate(base)
    img = rng.random((48, 48, 3))
    field = WarpField(base, base, tri, (48, 48))
    out = field.apply(img)
    assert field.mask.any()
    assert np.array_equal(out[field.mask], img[field.mask])
    assert np.all(out[~field.mask] == 0.0)


def test_warp_roundtrip_close():
    from scipy.ndimage import binary_erosion
    rng = np.random.default_rng(1)
    size = 64
    base = _base_shape(size)
    centre = base.points.mean(axis=0)
    other = Shape((base.points - centre) * [1.08, 0.94] + centre)
    tri = triangulate(base)
    gx, gy = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    img = 0.3 + 0.35 * gx + 0.25 * gy

    fwd, _ = warp(img, base, other, tri, (size, size))
    back, mask = warp(fwd, other, base, tri, (size, size))
    core = binary_erosion(mask, iterations=2)
    err = back[core] - img[core]
    assert np.sqrt(np.mean(err ** 2)) < 0.02


def test_shape_age_identity():
    base = _base_shape()
    mean = Shape(base.points * 0.5 + 3.0)
    out = shape_age(base, mean, mean)
    assert np.array_equal(out.points, base.points)


def test_shape_age_translation():
    base = _base_shape(100)
    m_in = Shape(fit_to_frame(base.points, 100))
    m_out = Shape(m_in.points + [2.0, 0.0])
    out = shape_age(m_in, m_in, m_out)
    assert np.allclose(out.points, m_in.points + [2.0, 0.0], atol=1e-9)


def test_degenerate_triangulation():
    with pytest.raises(DegenerateShape):
        pts = np.stack([np.arange(68.0), np.arange(68.0)], axis=1)
        geometry.delaunay_triangles(pts)
