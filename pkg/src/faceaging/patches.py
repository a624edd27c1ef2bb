"""Region partitioning of a face and feathered patch re-insertion.

A face splits into four regions: eyes, nose, mouth, and the skin mask
excluding them.  Region weights form a partition of unity on the face
hull so that re-inserting all four recoded regions covers the hull
seamlessly.
"""

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import ConvexHull, QhullError

from .config import FEATURE_PRIORITY, REGION_POLYGONS
from .errors import DegenerateShape, ShapeError

REGIONS = FEATURE_PRIORITY + ("skin",)


class RegionMasks:
    """Per-region weight rasters plus flat pixel supports (weight > 0)."""

    def __init__(self, weights, hull, frame):
        self.weights = weights          # region -> (H, W) float in [0, 1]
        self.hull = hull                # (H, W) bool
        self.frame = frame              # (H, W)
        self.supports = {r: np.flatnonzero(w.ravel() > 0.0)
                         for r, w in weights.items()}


def _convex_mask(points, frame):
    """Rasterize the convex hull of a point set on the pixel grid."""
    h, w = frame
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise DegenerateShape("region landmarks are degenerate") from exc
    verts = points[hull.vertices]           # counter-clockwise
    gy, gx = np.mgrid[0:h, 0:w]
    inside = np.ones((h, w), dtype=bool)
    eps = 1e-9
    for (x0, y0), (x1, y1) in zip(verts, np.roll(verts, -1, axis=0)):
        cross = (x1 - x0) * (gy - y0) - (y1 - y0) * (gx - x0)
        inside &= cross >= -eps
    return inside


def build_region_masks(shape, feather_px, frame):
    """Build the four-region partition of unity for one landmark set.

    ``feather_px = 0`` gives a hard partition; positive values ramp each
    feature's weight linearly over a band outside its polygon, with the
    skin weight absorbing the complement.
    """
    if feather_px < 0:
        raise ShapeError("feather_px must be >= 0")
    pts = shape.points
    hull = _convex_mask(pts, frame)

    cores = {}
    claimed = np.zeros(frame, dtype=bool)
    for region in FEATURE_PRIORITY:
        mask = np.zeros(frame, dtype=bool)
        for subset in REGION_POLYGONS[region]:
            mask |= _convex_mask(pts[list(subset)], frame)
        mask &= hull & ~claimed
        claimed |= mask
        cores[region] = mask

    weights = {}
    if feather_px > 0:
        for region, core in cores.items():
            if core.any():
                dist = distance_transform_edt(~core)
            else:
                dist = np.full(frame, np.inf)
            weights[region] = np.clip(1.0 - dist / feather_px, 0.0, 1.0) * hull
    else:
        weights = {r: cores[r].astype(float) for r in cores}

    total = sum(weights.values())
    over = total > 1.0
    for region in weights:
        weights[region][over] /= total[over]
    weights["skin"] = np.where(hull, 1.0 - np.minimum(total, 1.0), 0.0)
    return RegionMasks(weights, hull, frame)


def _check_frame(face, masks):
    face = np.asarray(face, dtype=float)
    if face.shape[:2] != masks.frame:
        raise ShapeError("face raster %s does not match mask frame %s"
                         % (face.shape[:2], masks.frame))
    return face


def extract_patch(face, masks, region):
    """Values of a face raster at the region's support, flattened
    pixel-major (all channels of one pixel contiguous)."""
    face = _check_frame(face, masks)
    channels = face.shape[2] if face.ndim == 3 else 1
    flat = face.reshape(-1, channels)
    return flat[masks.supports[region]].ravel()


def insert_patch(face, masks, region, patch):
    """Feathered insertion: weight * patch + (1 - weight) * face at the
    region's support; pixels elsewhere are untouched."""
    face = _check_frame(face, masks)
    support = masks.supports[region]
    channels = face.shape[2] if face.ndim == 3 else 1
    patch = np.asarray(patch, dtype=float)
    if patch.size != support.size * channels:
        raise ShapeError("patch length %d, expected %d"
                         % (patch.size, support.size * channels))
    vals = patch.reshape(support.size, channels)
    w = masks.weights[region].ravel()[support][:, None]
    out = face.copy()
    flat = out.reshape(-1, channels)
    flat[support] = w * vals + (1.0 - w) * flat[support]
    return out.reshape(face.shape)


def insert_patches(face, masks, patches):
    """Insert all given regions at once as a weighted combination.

    Simultaneous combination keeps the result independent of region
    order even where feathered supports overlap.
    """
    face = _check_frame(face, masks)
    channels = face.shape[2] if face.ndim == 3 else 1
    flat = face.reshape(-1, channels)
    acc = np.zeros_like(flat)
    wsum = np.zeros(flat.shape[0])
    for region in REGIONS:
        if region not in patches:
            continue
        support = masks.supports[region]
        vals = np.asarray(patches[region], dtype=float).reshape(
            support.size, channels)
        w = masks.weights[region].ravel()[support]
        acc[support] += w[:, None] * vals
        wsum[support] += w
    out = acc + (1.0 - wsum)[:, None] * flat
    return out.reshape(face.shape)
