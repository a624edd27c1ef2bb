"""End-to-end training of an AgingBundle and aging of probe faces.

Training warps every face to a per-gender canonical mean shape, fits the
two-factor model, and builds per-(gender, group, region) dictionaries of
age components in the canonical frame.  Aging recodes a probe's age
component region by region against the target group's dictionary, then
optionally shifts the landmarks by the group-mean profile delta.
Textures travel as reals in [0, 1]; clamping happens only at the final
raster write in the CLI.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import bundle_io, hfa, sparse
from .config import parse_binning_spec
from .dataset import AgeBinning, load_sample
from .errors import DataError, IoError, ShapeError
from .geometry import Shape, Triangulation, WarpField, mean_shape, shape_age, triangulate
from .patches import REGIONS, _convex_mask, build_region_masks, extract_patch, insert_patches
from scipy.ndimage import distance_transform_edt

GENDERS = ("male", "female")


@dataclass(frozen=True)
class PipelineSettings:
    frame_size: int = 100
    identity_dim: int = 10
    age_dim: int = 100
    max_sweeps: int = 200
    elbo_rel_tol: float = 1e-6
    seed: int = 0
    feather_px: float = 3.0
    max_support: int = 0        # 0 means ceil(K / 10)
    lambda_ratio: float = 0.01
    kkt_tol: float = 1e-8
    binning: AgeBinning = field(default_factory=AgeBinning)

    @classmethod
    def from_config(cls, values):
        return cls(
            frame_size=int(values["frame_size"]),
            identity_dim=int(values["identity_dim"]),
            age_dim=int(values["age_dim"]),
            max_sweeps=int(values["max_sweeps"]),
            elbo_rel_tol=float(values["elbo_rel_tol"]),
            seed=int(values["seed"]),
            feather_px=float(values["feather_px"]),
            max_support=int(values["max_support"]),
            lambda_ratio=float(values["lambda_ratio"]),
            kkt_tol=float(values["kkt_tol"]),
            binning=AgeBinning(parse_binning_spec(values["binning"])),
        )


class AgingBundle:
    """Trained artifacts: per-gender model, group mean shapes, and
    per-(gender, group, region) age-component dictionaries."""

    def __init__(self, frame_size, feather_px, binning, models,
                 canonical_shapes, group_shapes, dictionaries, config_echo):
        self.frame_size = frame_size
        self.feather_px = feather_px
        self.binning = binning
        self.models = models                  # gender -> HfaModel
        self.canonical_shapes = canonical_shapes  # gender -> Shape
        self.group_shapes = group_shapes      # (gender, group) -> Shape
        self.dictionaries = dictionaries      # (gender, group, region) -> AgeDictionary
        self.config_echo = dict(config_echo)
        self._tri = {}
        self._masks = {}
        self._fulls = {}

    def triangulation(self, gender):
        if gender not in self._tri:
            self._tri[gender] = triangulate(self.canonical_shapes[gender])
        return self._tri[gender]

    def canonical_masks(self, gender):
        if gender not in self._masks:
            frame = (self.frame_size, self.frame_size)
            self._masks[gender] = build_region_masks(
                self.canonical_shapes[gender], self.feather_px, frame)
        return self._masks[gender]

    def groups_for(self, gender):
        return sorted(g for (gd, g) in self.group_shapes if gd == gender)

    def full_age_components(self, gender, group):
        """Full-frame canonical age-component rasters (K, F, F, 3),
        recombined from the four region dictionaries."""
        key = (gender, group)
        if key not in self._fulls:
            masks = self.canonical_masks(gender)
            dicts = {r: self.dictionaries[(gender, group, r)] for r in REGIONS}
            counts = {dicts[r].num_atoms for r in REGIONS}
            if len(counts) != 1:
                raise DataError("inconsistent atom counts across regions")
            k = counts.pop()
            frame = (self.frame_size, self.frame_size, 3)
            fulls = np.empty((k,) + frame)
            zero = np.zeros(frame)
            for i in range(k):
                patches = {r: dicts[r].atoms[:, i] * dicts[r].column_norms[i]
                           for r in REGIONS}
                fulls[i] = insert_patches(zero, masks, patches)
            self._fulls[key] = fulls
        return self._fulls[key]

    def age_centroid(self, gender, group):
        fulls = self.full_age_components(gender, group)
        return fulls.mean(axis=0).ravel()


@dataclass
class AgingRequest:
    image: np.ndarray          # H x W x 3, uint8 or float in [0, 1]
    landmarks: Shape
    gender: str
    source_group: int
    target_group: int
    apply_shape_aging: bool = True
    feather_px: float = None   # None: use the bundle's training value
    stop: sparse.SolverStop = None


def raster_to_vector(raster):
    return np.asarray(raster, dtype=float).ravel()


def vector_to_raster(vec, frame_size):
    return np.asarray(vec, dtype=float).reshape(frame_size, frame_size, 3)


def image_to_float(image):
    img = np.asarray(image)
    if img.dtype == np.uint8:
        return img.astype(float) / 255.0
    return img.astype(float)


def train_bundle(manifest, settings):
    """Train per-gender models and dictionaries from a manifest."""
    binning = settings.binning
    frame = settings.frame_size
    samples = [load_sample(e, binning) for e in manifest.entries]
    by_gender = {}
    for s in samples:
        by_gender.setdefault(s.gender, []).append(s)
    if not by_gender:
        raise DataError("manifest contains no samples")

    models, canonical_shapes, group_shapes, dictionaries = {}, {}, {}, {}
    for gender, gsamples in by_gender.items():
        groups = sorted({s.age_group for s in gsamples})
        if len(groups) < 2:
            raise DataError("gender %r covers %d age group(s); need >= 2"
                            % (gender, len(groups)))
        canonical = mean_shape([s.shape for s in gsamples], frame_size=frame)
        canonical_shapes[gender] = canonical
        tri = triangulate(canonical)

        grouped = {}
        vectors = []
        for s in gsamples:
            fld = WarpField(s.shape, canonical, tri, (frame, frame))
            vec = raster_to_vector(fld.apply(image_to_float(s.pixels)))
            vectors.append(vec)
            grouped.setdefault((s.subject_id, s.age_group), []).append(vec)

        cfg = hfa.HfaConfig(d=frame * frame * 3,
                            p=settings.identity_dim, q=settings.age_dim,
                            max_sweeps=settings.max_sweeps,
                            elbo_rel_tol=settings.elbo_rel_tol,
                            seed=settings.seed)
        model, _ = hfa.train(grouped, cfg)
        models[gender] = model

        for g in groups:
            members = [s.shape for s in gsamples if s.age_group == g]
            group_shapes[(gender, g)] = mean_shape(members, frame_size=frame)

        masks = build_region_masks(canonical, settings.feather_px, (frame, frame))
        per_cell = {}
        for s, vec in zip(gsamples, vectors):
            age_comp = vec - model.m - hfa.project_identity(model, vec)
            raster = vector_to_raster(age_comp, frame)
            for region in REGIONS:
                per_cell.setdefault((s.age_group, region), []).append(
                    extract_patch(raster, masks, region))
        for (g, region), atoms in per_cell.items():
            dictionaries[(gender, g, region)] = sparse.build_dictionary(
                atoms, group_id=g, region_id=region)

    echo = {
        "frame_size": str(settings.frame_size),
        "identity_dim": str(settings.identity_dim),
        "age_dim": str(settings.age_dim),
        "max_sweeps": str(settings.max_sweeps),
        "elbo_rel_tol": repr(settings.elbo_rel_tol),
        "seed": str(settings.seed),
        "feather_px": repr(settings.feather_px),
        "max_support": str(settings.max_support),
        "lambda_ratio": repr(settings.lambda_ratio),
        "kkt_tol": repr(settings.kkt_tol),
        "binning": ",".join("%d-%d" % b for b in binning.boundaries),
    }
    return AgingBundle(frame, settings.feather_px, binning, models,
                       canonical_shapes, group_shapes, dictionaries, echo)


def _hull_blend_weight(hull_shape, frame, feather_px):
    """1 at >= feather_px inside the hull, 0 outside, linear on the band."""
    hull = _convex_mask(hull_shape.points, frame)
    if feather_px <= 0:
        return hull.astype(float)
    dist = distance_transform_edt(hull)
    return np.clip(dist / feather_px, 0.0, 1.0) * hull


def composite_into_background(original, aged, hull, feather_px):
    original = np.asarray(original, dtype=float)
    aged = np.asarray(aged, dtype=float)
    if original.shape != aged.shape:
        raise ShapeError("original and aged rasters differ in shape")
    w = _hull_blend_weight(hull, original.shape[:2], feather_px)
    if original.ndim == 3:
        w = w[..., None]
    return np.where(w > 0.0, w * aged + (1.0 - w) * original, original)


def _require(condition, message):
    if not condition:
        raise DataError(message)


def age_face(bundle, request):
    """Age (or rejuvenate) one probe face; returns (raster, diagnostics)."""
    t0 = time.perf_counter()
    gender = request.gender
    _require(gender in bundle.models, "no model trained for gender %r" % gender)
    for region in REGIONS:
        _require((gender, request.target_group, region) in bundle.dictionaries,
                 "no dictionary for cell (%s, group %d, %s)"
                 % (gender, request.target_group, region))
    _require((gender, request.source_group) in bundle.group_shapes,
             "no mean shape for source group %d" % request.source_group)
    _require((gender, request.target_group) in bundle.group_shapes,
             "no mean shape for target group %d" % request.target_group)

    model = bundle.models[gender]
    frame = bundle.frame_size
    canonical = bundle.canonical_shapes[gender]
    tri = bundle.triangulation(gender)
    img = image_to_float(request.image)
    out_size = img.shape[:2]
    feather = bundle.feather_px if request.feather_px is None else request.feather_px

    # probe into the canonical frame; identity component there
    to_canon = WarpField(request.landmarks, canonical, tri, (frame, frame))
    f_canon = raster_to_vector(to_canon.apply(img))
    ux_canon = hfa.project_identity(model, f_canon)

    # mean and identity back in the probe's own shape; the probe's age
    # component is formed by subtraction so it is never warped itself
    to_probe = WarpField(canonical, request.landmarks, tri, out_size)
    m_warped = to_probe.apply(vector_to_raster(model.m, frame))
    ux_warped = to_probe.apply(vector_to_raster(ux_canon, frame))
    age_orig = img - m_warped - ux_warped

    # target-group atoms deform exactly once: canonical -> probe shape
    fulls = bundle.full_age_components(gender, request.target_group)
    warped_atoms = [to_probe.apply(a) for a in fulls]

    masks = build_region_masks(request.landmarks, feather, out_size)
    recoded = {}
    diagnostics = {"regions": {}, "gender": gender,
                   "source_group": request.source_group,
                   "target_group": request.target_group}
    for region in REGIONS:
        atom_patches = [extract_patch(a, masks, region) for a in warped_atoms]
        norms = [np.linalg.norm(p) for p in atom_patches]
        kept = [p for p, n in zip(atom_patches, norms) if n > 0.0]
        y = extract_patch(age_orig, masks, region)
        if not kept:
            recoded[region] = np.zeros_like(y)
            diagnostics["regions"][region] = {
                "support_size": 0, "residual_norm": float(np.linalg.norm(y)),
                "kkt_residual": 0.0, "lambda_final": 0.0}
            continue
        dictionary = sparse.build_dictionary(kept, request.target_group, region)
        stop = request.stop
        if stop is None:
            stop = sparse.default_stop(dictionary.num_atoms)
        code = sparse.homotopy_solve(dictionary, y, stop)
        recon = sparse.reconstruct(dictionary, code)
        recoded[region] = recon
        diagnostics["regions"][region] = {
            "support_size": code.support_size,
            "residual_norm": float(np.linalg.norm(y - recon)),
            "kkt_residual": code.kkt_residual,
            "lambda_final": code.lambda_final,
        }

    new_age = insert_patches(age_orig, masks, recoded)
    aged = m_warped + ux_warped + new_age

    out_shape = request.landmarks
    if request.apply_shape_aging:
        s_input = bundle.group_shapes[(gender, request.source_group)]
        s_target = bundle.group_shapes[(gender, request.target_group)]
        s_new = shape_age(request.landmarks, s_input, s_target)
        if not np.array_equal(s_new.points, request.landmarks.points):
            to_new = WarpField(request.landmarks, s_new, tri, out_size)
            aged = to_new.apply(aged)
            out_shape = s_new

    result = composite_into_background(img, aged, out_shape, feather)
    diagnostics["elapsed_ms"] = (time.perf_counter() - t0) * 1000.0
    return result, diagnostics


def rejuvenate_face(bundle, request):
    """Rejuvenation is the same machinery with a younger target group."""
    return age_face(bundle, request)


# --- bundle serialization -------------------------------------------------

def bundle_to_bytes(bundle):
    sections = {}
    genders = sorted(bundle.models)
    meta = {
        "frame_size": bundle.frame_size,
        "feather_px": bundle.feather_px,
        "binning": [list(b) for b in bundle.binning.boundaries],
        "genders": genders,
        "groups": {g: bundle.groups_for(g) for g in genders},
        "config_echo": bundle.config_echo,
    }
    sections["meta"] = bundle_io.json_payload(meta)
    for g in genders:
        model = bundle.models[g]
        sections["model/%s" % g] = bundle_io.pack_arrays({
            "m": model.m, "U": model.U, "V": model.V,
            "sigma2": np.array(model.sigma2)})
        sections["canon/%s" % g] = bundle_io.pack_arrays(
            {"points": bundle.canonical_shapes[g].points})
        for grp in bundle.groups_for(g):
            sections["gshape/%s/%03d" % (g, grp)] = bundle_io.pack_arrays(
                {"points": bundle.group_shapes[(g, grp)].points})
            for region in REGIONS:
                key = (g, grp, region)
                if key not in bundle.dictionaries:
                    continue
                d = bundle.dictionaries[key]
                sections["dict/%s/%03d/%s" % (g, grp, region)] = \
                    bundle_io.pack_arrays({"atoms": d.atoms,
                                           "norms": d.column_norms})
    return bundle_io.write_sections(sections)


def bundle_from_bytes(data):
    sections = bundle_io.read_sections(data)
    meta = bundle_io.parse_json_payload(sections["meta"])
    binning = AgeBinning(tuple(tuple(b) for b in meta["binning"]))
    models, canonical_shapes, group_shapes, dictionaries = {}, {}, {}, {}
    for g in meta["genders"]:
        arrays = bundle_io.unpack_arrays(sections["model/%s" % g])
        models[g] = hfa.HfaModel(m=arrays["m"], U=arrays["U"], V=arrays["V"],
                                 sigma2=float(arrays["sigma2"]))
        canon = bundle_io.unpack_arrays(sections["canon/%s" % g])
        canonical_shapes[g] = Shape(canon["points"])
        for grp in meta["groups"][g]:
            sh = bundle_io.unpack_arrays(sections["gshape/%s/%03d" % (g, grp)])
            group_shapes[(g, grp)] = Shape(sh["points"])
            for region in REGIONS:
                name = "dict/%s/%03d/%s" % (g, grp, region)
                if name in sections:
                    arrs = bundle_io.unpack_arrays(sections[name])
                    dictionaries[(g, grp, region)] = sparse.AgeDictionary(
                        atoms=arrs["atoms"], group_id=grp, region_id=region,
                        column_norms=arrs["norms"])
    return AgingBundle(int(meta["frame_size"]), float(meta["feather_px"]),
                       binning, models, canonical_shapes, group_shapes,
                       dictionaries, meta["config_echo"])


def save_bundle(bundle, path):
    try:
        with open(path, "wb") as fh:
            fh.write(bundle_to_bytes(bundle))
    except OSError as exc:
        raise IoError("cannot write bundle %r: %s" % (path, exc)) from exc


def load_bundle(path):
    try:
        with open(path, "rb") as fh:
            return bundle_from_bytes(fh.read())
    except OSError as exc:
        raise IoError("cannot read bundle %r: %s" % (path, exc)) from exc
