"""Synthetic datasets with known ground truth and evaluation proxies.

The vector-mode generator runs the face model forward and is the oracle
for the trainer and projection tests.  Raster mode renders the same
linear structure as smooth textures, writes PGM images plus landmark
and manifest files, and exercises the full image pipeline without real
face data.  The proxies stand in for external identity and perceived-age
evaluations; they are nearest-centroid / cosine measures, not
reproductions of any published score.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import Delaunay

from . import hfa
from .dataset import Manifest, ManifestEntry, save_manifest
from .errors import DegenerateInput, ShapeError
from .geometry import NUM_LANDMARKS, Shape, fit_to_frame


@dataclass(frozen=True)
class SynthConfig:
    d: int
    p: int
    q: int
    num_identities: int
    num_groups: int
    images_per_cell: int = 1
    sigma: float = 0.05
    seed: int = 0
    frame_size: int = 0          # > 0 enables raster mode (d is derived)
    landmark_jitter: float = 0.0  # per-group shape scaling, raster mode

    def __post_init__(self):
        if min(self.p, self.q, self.num_identities, self.num_groups,
               self.images_per_cell) <= 0:
            raise ShapeError("synthetic dimensions must be positive")
        if self.sigma < 0:
            raise ShapeError("sigma must be >= 0")


@dataclass
class GroundTruth:
    m: np.ndarray
    U: np.ndarray
    V: np.ndarray
    sigma2: float
    identity_factors: dict
    age_factors: dict


# Raster-mode signal design: identity texture is stronger than the age
# texture so the person-specific part dominates each face, and the age
# factors drift smoothly across neighbouring groups (length scale in
# group-index units).
RASTER_IDENTITY_AMP = 2.0
RASTER_AGE_AMP = 1.0
RASTER_AGE_CORRELATION = 2.0


def _unit_columns(mat):
    return mat / np.linalg.norm(mat, axis=0)


def generate_synthetic(config):
    """Sample grouped face vectors from the generative model.

    Returns ({(identity, group): [vectors]}, GroundTruth); deterministic
    for a fixed seed.
    """
    rng = np.random.default_rng(config.seed)
    d = config.d
    m = rng.standard_normal(d)
    U = _unit_columns(rng.standard_normal((d, config.p)))
    V = _unit_columns(rng.standard_normal((d, config.q)))
    xs = {i: rng.standard_normal(config.p) for i in range(config.num_identities)}
    ys = {j: rng.standard_normal(config.q) for j in range(config.num_groups)}
    data = {}
    for i in range(config.num_identities):
        base = m + U @ xs[i]
        for j in range(config.num_groups):
            cell = []
            for _ in range(config.images_per_cell):
                eps = config.sigma * rng.standard_normal(d)
                cell.append(base + V @ ys[j] + eps)
            data[(i, j)] = cell
    truth = GroundTruth(m=m, U=U, V=V, sigma2=config.sigma ** 2,
                        identity_factors=xs, age_factors=ys)
    return data, truth


def synthetic_face_landmarks(frame_size):
    """A plausible 68-point layout filling the canonical frame."""
    a, b = 1.0, 1.3
    pts = []
    for psi in np.linspace(-1.9, 1.9, 17):                      # jaw
        pts.append((a * np.sin(psi), b * np.cos(psi) - 0.2))
    for t in np.linspace(0.0, 1.0, 5):                          # right brow
        pts.append((-0.7 * a + 0.5 * a * t, -0.72 * b - 0.06 * b * np.sin(t * np.pi)))
    for t in np.linspace(0.0, 1.0, 5):                          # left brow
        pts.append((0.2 * a + 0.5 * a * t, -0.72 * b - 0.06 * b * np.sin((1 - t) * np.pi)))
    for t in np.linspace(0.0, 1.0, 4):                          # nose bridge
        pts.append((0.0, -0.5 * b + 0.55 * b * t))
    for t in np.linspace(0.0, 1.0, 5):                          # nostril base
        pts.append((-0.15 * a + 0.3 * a * t, 0.14 * b + 0.03 * b * np.sin(t * np.pi)))
    for ang in np.linspace(np.pi, np.pi + 2 * np.pi, 7)[:6]:    # right eye
        pts.append((-0.45 * a + 0.13 * a * np.cos(ang), -0.5 * b + 0.07 * b * np.sin(ang)))
    for ang in np.linspace(np.pi, np.pi + 2 * np.pi, 7)[:6]:    # left eye
        pts.append((0.45 * a + 0.13 * a * np.cos(ang), -0.5 * b + 0.07 * b * np.sin(ang)))
    for ang in np.linspace(np.pi, np.pi + 2 * np.pi, 13)[:12]:  # outer lip
        pts.append((0.3 * a * np.cos(ang), 0.52 * b + 0.1 * b * np.sin(ang)))
    for ang in np.linspace(np.pi, np.pi + 2 * np.pi, 9)[:8]:    # inner lip
        pts.append((0.18 * a * np.cos(ang), 0.52 * b + 0.05 * b * np.sin(ang)))
    pts = np.asarray(pts)
    assert pts.shape == (NUM_LANDMARKS, 2)
    return Shape(fit_to_frame(pts, frame_size))


def _smooth_field(rng, frame_size):
    field = gaussian_filter(rng.standard_normal((frame_size, frame_size)),
                            sigma=frame_size / 8.0, mode="wrap")
    return field / np.abs(field).max()


def _replicate_rgb(gray_vec):
    return np.repeat(gray_vec, 3)


def _write_pgm(path, gray):
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(gray.astype(np.uint8).tobytes())


def _write_landmarks(path, shape):
    lines = ["version: 1", "n_points: %d" % NUM_LANDMARKS, "{"]
    lines += ["%.10f %.10f" % (x, y) for x, y in shape.points]
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def generate_raster_dataset(config, out_dir):
    """Render the synthetic model as PGM faces with landmark and manifest
    files consumable by the dataset module.

    Identities split evenly into male and female; group j gets the age
    10*j + 5 so the default decade binning maps it back to group j.
    Returns (manifest, GroundTruth with RGB-flattened parameters).
    """
    if config.frame_size <= 0:
        raise ShapeError("raster mode requires frame_size > 0")
    frame = config.frame_size
    rng = np.random.default_rng(config.seed)
    m_g = 0.5 + 0.10 * _smooth_field(rng, frame).ravel()
    base_shape = synthetic_face_landmarks(frame)
    fields = np.stack([_smooth_field(rng, frame).ravel()
                       for _ in range(config.p + config.q)], axis=1)
    # Joint orthogonalization keeps the identity and age subspaces
    # disjoint, so the two factors are identifiable from the images.
    # The inner product is restricted to the face hull because that is
    # the only part a shape-normalized pipeline ever observes.
    hull = Delaunay(base_shape.points).find_simplex(
        np.stack(np.meshgrid(np.arange(frame), np.arange(frame)),
                 axis=-1).reshape(-1, 2)) >= 0
    _, r = np.linalg.qr(fields[hull])
    basis = fields @ np.linalg.inv(r)
    U_g = RASTER_IDENTITY_AMP * basis[:, :config.p]
    V_g = RASTER_AGE_AMP * basis[:, config.p:]
    xs = {i: rng.standard_normal(config.p) for i in range(config.num_identities)}
    # Age factors drift smoothly across neighbouring groups (RBF kernel
    # over the group index) and share one norm, so the rendered age
    # patterns change gradually rather than jumping between unrelated
    # textures of arbitrary strength.
    idx = np.arange(config.num_groups)
    kern = np.exp(-0.5 * ((idx[:, None] - idx[None, :])
                          / RASTER_AGE_CORRELATION) ** 2)
    chol = np.linalg.cholesky(kern + 1e-12 * np.eye(config.num_groups))
    walk = chol @ rng.standard_normal((config.num_groups, config.q))
    walk *= np.sqrt(config.q) / np.linalg.norm(walk, axis=1, keepdims=True)
    ys = {j: walk[j] for j in range(config.num_groups)}

    centre = base_shape.points.mean(axis=0)
    group_shapes = {}
    for j in range(config.num_groups):
        rel = (j - (config.num_groups - 1) / 2.0) / max(config.num_groups - 1, 1)
        scale = 1.0 + config.landmark_jitter * rel
        group_shapes[j] = Shape((base_shape.points - centre) * scale + centre)

    img_dir = os.path.join(out_dir, "images")
    lmk_dir = os.path.join(out_dir, "landmarks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lmk_dir, exist_ok=True)

    entries = []
    for i in range(config.num_identities):
        gender = "male" if i < (config.num_identities + 1) // 2 else "female"
        for j in range(config.num_groups):
            for k in range(config.images_per_cell):
                gray = m_g + U_g @ xs[i] + V_g @ ys[j] \
                    + config.sigma * rng.standard_normal(frame * frame)
                raster = np.clip(gray, 0.0, 1.0).reshape(frame, frame)
                quant = np.round(raster * 255.0)
                stem = "s%03d_g%02d_%02d" % (i, j, k)
                img_path = os.path.join(img_dir, stem + ".pgm")
                lmk_path = os.path.join(lmk_dir, stem + ".pts")
                _write_pgm(img_path, quant)
                _write_landmarks(lmk_path, group_shapes[j])
                entries.append(ManifestEntry(
                    subject_id="s%03d" % i, age=10 * j + 5, gender=gender,
                    image_path=img_path, landmarks_path=lmk_path))
    manifest = Manifest(tuple(entries))
    save_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    truth = GroundTruth(m=_replicate_rgb(m_g),
                        U=np.stack([_replicate_rgb(c) for c in U_g.T], axis=1),
                        V=np.stack([_replicate_rgb(c) for c in V_g.T], axis=1),
                        sigma2=config.sigma ** 2,
                        identity_factors=xs, age_factors=ys)
    return manifest, truth


def principal_angles(A, B):
    """Principal angles (radians, ascending) between two subspaces."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != B.shape[0]:
        raise ShapeError("subspaces must share the ambient dimension")
    qa, ra = np.linalg.qr(A)
    qb, rb = np.linalg.qr(B)
    if np.linalg.matrix_rank(ra) < A.shape[1] \
            or np.linalg.matrix_rank(rb) < B.shape[1]:
        raise DegenerateInput("subspace basis is rank deficient")
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.sort(np.arccos(np.clip(sv, -1.0, 1.0)))


def identity_preservation_score(model, f_before, f_after):
    """Cosine similarity of identity components; 0 when either is zero."""
    a = hfa.project_identity(model, f_before)
    b = hfa.project_identity(model, f_after)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def age_group_proxy(bundle, face_vector, gender):
    """Nearest-centroid age-group prediction from the age component
    (ties broken toward the lowest group index)."""
    model = bundle.models[gender]
    f = np.asarray(face_vector, dtype=float)
    if f.shape != (model.d,):
        raise ShapeError("expected canonical face vector of length %d" % model.d)
    age_part = f - model.m - hfa.project_identity(model, f)
    best_group, best_dist = None, np.inf
    for g in bundle.groups_for(gender):
        dist = np.linalg.norm(age_part - bundle.age_centroid(gender, g))
        if dist < best_dist:
            best_group, best_dist = g, dist
    return best_group
