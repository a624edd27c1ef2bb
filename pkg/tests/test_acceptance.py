"""End-to-end acceptance checks at pinned tolerances.

Each test records a single PASS/FAIL line that conftest echoes in the
terminal summary, so the suite doubles as a human-readable scorecard.
"""

import time

import numpy as np
import pytest
from scipy.ndimage import binary_dilation, binary_erosion
from scipy.spatial import Delaunay

from faceaging import dataset, hfa, pipeline, sparse, synthval
from faceaging.geometry import (Shape, WarpField, fit_to_frame, mean_shape,
                                shape_age, similarity_align, triangulate, warp)
from faceaging.synthval import synthetic_face_landmarks

import conftest
from test_sparse import lasso_by_sign_enumeration


def _report(num, name, ok, detail):
    line = "[acceptance %d] %-28s %s  (%s)" % (
        num, name, "PASS" if ok else "FAIL", detail)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def _canonical_vector(bundle, sample):
    frame = bundle.frame_size
    tri = bundle.triangulation(sample.gender)
    fld = WarpField(sample.shape, bundle.canonical_shapes[sample.gender],
                    tri, (frame, frame))
    return pipeline.raster_to_vector(
        fld.apply(pipeline.image_to_float(sample.pixels)))


def test_factor_model_subspace_recovery():
    cfg = synthval.SynthConfig(d=200, p=3, q=4, num_identities=40,
                               num_groups=7, sigma=0.05, seed=7)
    data, truth = synthval.generate_synthetic(cfg)
    t0 = time.perf_counter()
    model, state = hfa.train(
        data, hfa.HfaConfig(d=200, p=3, q=4, seed=0, max_sweeps=100,
                            elbo_rel_tol=1e-12))
    elapsed = time.perf_counter() - t0
    ang_u = np.degrees(synthval.principal_angles(truth.U, model.U).max())
    ang_v = np.degrees(synthval.principal_angles(truth.V, model.V).max())
    history = np.array(state.elbo_history)
    monotone = bool(np.all(np.diff(history) >= -1e-8))
    ok = ang_u <= 10.0 and ang_v <= 10.0 and monotone and elapsed <= 60.0
    _report(1, "subspace recovery", ok,
            "angles %.2f/%.2f deg, monotone=%s, %.2fs, %d sweeps"
            % (ang_u, ang_v, monotone, elapsed, len(history)))


def test_projection_identities():
    rng = np.random.default_rng(21)
    worst_split = 0.0
    worst_proj = 0.0
    for _ in range(100):
        d = int(rng.integers(20, 101))
        p = int(rng.integers(1, 6))
        q = int(rng.integers(1, 6))
        model = hfa.HfaModel(m=rng.standard_normal(d),
                             U=rng.standard_normal((d, p)),
                             V=rng.standard_normal((d, q)),
                             sigma2=float(rng.uniform(0.01, 1.0)))
        f = rng.standard_normal(d)
        r = f - model.m
        sigma = model.sigma2 * np.eye(d) + model.U @ model.U.T \
            + model.V @ model.V.T
        g = np.linalg.solve(sigma, r)

        parts = hfa.decompose(model, f)
        total = parts.identity + parts.age + model.sigma2 * model.solve_sigma(r)
        worst_split = max(worst_split,
                          np.linalg.norm(total - r) / np.linalg.norm(r))

        ident = model.U @ (model.U.T @ g)
        age = model.V @ (model.V.T @ g)
        worst_proj = max(
            worst_proj,
            np.linalg.norm(hfa.project_identity(model, f) - ident)
            / max(np.linalg.norm(ident), 1e-300),
            np.linalg.norm(hfa.project_age(model, f) - age)
            / max(np.linalg.norm(age), 1e-300))
    ok = worst_split <= 1e-9 and worst_proj <= 1e-10
    _report(2, "projection identities", ok,
            "split rel err %.2e, projection rel err %.2e"
            % (worst_split, worst_proj))


def test_sparse_solver_exactness():
    rng = np.random.default_rng(42)
    worst_enum = 0.0
    worst_kkt = 0.0
    for _ in range(50):
        D = sparse.build_dictionary(
            [rng.standard_normal(8) for _ in range(5)], 0, "skin")
        y = rng.standard_normal(8)
        ratio = float(rng.uniform(0.05, 0.8))
        code = sparse.homotopy_solve(
            D, y, sparse.SolverStop(max_support=5, lambda_ratio=ratio))
        oracle = lasso_by_sign_enumeration(D.atoms, y, code.lambda_final)
        worst_enum = max(worst_enum,
                         float(np.abs(code.coefficients - oracle).max()))
        worst_kkt = max(worst_kkt, code.kkt_residual)

    worst_soft = 0.0
    for seed in range(10):
        rng2 = np.random.default_rng(100 + seed)
        qmat, _ = np.linalg.qr(rng2.standard_normal((12, 6)))
        D = sparse.build_dictionary(list(qmat.T), 0, "skin")
        y = rng2.standard_normal(12)
        code = sparse.homotopy_solve(
            D, y, sparse.SolverStop(max_support=6, lambda_ratio=0.3))
        c = D.atoms.T @ y
        soft = np.sign(c) * np.maximum(np.abs(c) - code.lambda_final, 0.0)
        worst_soft = max(worst_soft,
                         float(np.abs(code.coefficients - soft).max()))
        worst_kkt = max(worst_kkt, code.kkt_residual)
    ok = worst_enum <= 1e-8 and worst_soft <= 1e-10 and worst_kkt <= 1e-8
    _report(3, "sparse solver exactness", ok,
            "enum diff %.2e, soft diff %.2e, kkt %.2e"
            % (worst_enum, worst_soft, worst_kkt))


def test_warp_and_shape_statistics():
    rng = np.random.default_rng(3)
    size = 64
    base = synthetic_face_landmarks(size)
    tri = triangulate(base)

    # identity warp exactness on the hull interior
    img = rng.random((size, size, 3))
    field = WarpField(base, base, tri, (size, size))
    out = field.apply(img)
    identity_exact = bool(np.array_equal(out[field.mask], img[field.mask]))

    # A -> B -> A round trip on a smooth gradient
    centre = base.points.mean(axis=0)
    other = Shape((base.points - centre) * [1.08, 0.94] + centre)
    gx, gy = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    grad = 0.25 + 0.4 * gx + 0.3 * gy
    fwd, _ = warp(grad, base, other, tri, (size, size))
    back, mask = warp(fwd, other, base, tri, (size, size))
    core = binary_erosion(mask, iterations=2)
    mse = float(np.mean((back[core] - grad[core]) ** 2))
    psnr = 10.0 * np.log10(1.0 / mse)

    # shape aging with a zero profile delta is the identity
    mean_profile = Shape(base.points * 0.7 + 5.0)
    unchanged = shape_age(base, mean_profile, mean_profile)
    shape_exact = bool(np.array_equal(unchanged.points, base.points))

    # Procrustes mean recovers the base under landmark noise
    base100 = synthetic_face_landmarks(100)
    shapes = []
    for _ in range(150):
        noisy = base100.points + 0.5 * rng.standard_normal((68, 2))
        ang = rng.uniform(-0.3, 0.3)
        c, s = np.cos(ang), np.sin(ang)
        rot = np.array([[c, -s], [s, c]]) * rng.uniform(0.8, 1.25)
        shapes.append(Shape(noisy @ rot.T + rng.uniform(-8, 8, size=2)))
    recovered = mean_shape(shapes, frame_size=100)
    target = Shape(fit_to_frame(base100.points, 100))
    aligned, _ = similarity_align(recovered, target)
    rms = float(np.sqrt(np.mean((aligned.points - target.points) ** 2)))

    ok = identity_exact and psnr >= 35.0 and shape_exact and rms <= 0.15
    _report(4, "warp and shape statistics", ok,
            "identity=%s, psnr %.1f dB, shape identity=%s, mean rms %.3f px"
            % (identity_exact, psnr, shape_exact, rms))


def test_pipeline_self_reconstruction(trained):
    bundle = trained["bundle"]
    stop = sparse.SolverStop(max_support=16, lambda_ratio=0.0)
    worst = 0.0
    outside_identical = True
    for entry in trained["manifest"].entries:
        sample = dataset.load_sample(entry, bundle.binning)
        request = pipeline.AgingRequest(
            image=sample.pixels, landmarks=sample.shape, gender=sample.gender,
            source_group=sample.age_group, target_group=sample.age_group,
            stop=stop)
        out, _ = pipeline.age_face(bundle, request)
        img = pipeline.image_to_float(sample.pixels)
        inside = Delaunay(sample.shape.points).find_simplex(
            np.stack(np.meshgrid(np.arange(img.shape[1]),
                                 np.arange(img.shape[0])), axis=-1)
            .reshape(-1, 2)).reshape(img.shape[:2]) >= 0
        worst = max(worst, float(np.abs(out - img)[inside].max()))
        far_outside = ~binary_dilation(inside, iterations=2)
        outside_identical &= bool(np.array_equal(out[far_outside],
                                                 img[far_outside]))
    ok = worst <= 1e-6 and outside_identical
    _report(5, "pipeline self-reconstruction", ok,
            "%d probes, hull err %.2e, outside identical=%s"
            % (len(trained["manifest"].entries), worst, outside_identical))


def test_identity_preservation(trained):
    bundle = trained["bundle"]
    probes = trained["manifest"].entries[::4][:50]
    assert len(probes) == 50
    worst = 1.0
    for entry in probes:
        sample = dataset.load_sample(entry, bundle.binning)
        f_before = _canonical_vector(bundle, sample)
        model = bundle.models[sample.gender]
        for target in bundle.groups_for(sample.gender):
            if target == sample.age_group:
                continue
            request = pipeline.AgingRequest(
                image=sample.pixels, landmarks=sample.shape,
                gender=sample.gender, source_group=sample.age_group,
                target_group=target, apply_shape_aging=False)
            out, _ = pipeline.age_face(bundle, request)
            frame = bundle.frame_size
            tri = bundle.triangulation(sample.gender)
            fld = WarpField(sample.shape,
                            bundle.canonical_shapes[sample.gender],
                            tri, (frame, frame))
            f_after = pipeline.raster_to_vector(fld.apply(out))
            score = synthval.identity_preservation_score(model, f_before,
                                                         f_after)
            worst = min(worst, score)
    ok = worst >= 0.98
    _report(6, "identity preservation", ok,
            "50 probes x all targets, min score %.4f" % worst)


def test_age_monotonicity(trained):
    bundle = trained["bundle"]
    num_groups = 7
    eligible = [e for e in trained["manifest"].entries
                if (e.age // 10) <= num_groups - 5]
    probes = eligible[:50]
    assert len(probes) == 50
    good = 0
    for entry in probes:
        sample = dataset.load_sample(entry, bundle.binning)
        targets = list(range(sample.age_group + 1, sample.age_group + 5))
        predictions = []
        for target in targets:
            request = pipeline.AgingRequest(
                image=sample.pixels, landmarks=sample.shape,
                gender=sample.gender, source_group=sample.age_group,
                target_group=target, apply_shape_aging=False)
            out, _ = pipeline.age_face(bundle, request)
            frame = bundle.frame_size
            tri = bundle.triangulation(sample.gender)
            fld = WarpField(sample.shape,
                            bundle.canonical_shapes[sample.gender],
                            tri, (frame, frame))
            vec = pipeline.raster_to_vector(fld.apply(out))
            predictions.append(
                synthval.age_group_proxy(bundle, vec, sample.gender))
        if all(a <= b for a, b in zip(predictions, predictions[1:])):
            good += 1
    rate = good / len(probes)
    ok = rate >= 0.80
    _report(7, "age monotonicity", ok,
            "%d/%d probes non-decreasing (%.0f%%)"
            % (good, len(probes), 100 * rate))


def test_desk_scale_budget(trained):
    bundle = trained["bundle"]
    train_seconds = trained["train_seconds"]
    sample = dataset.load_sample(trained["manifest"].entries[0],
                                 bundle.binning)
    request = pipeline.AgingRequest(
        image=sample.pixels, landmarks=sample.shape, gender=sample.gender,
        source_group=sample.age_group, target_group=6)
    t0 = time.perf_counter()
    pipeline.age_face(bundle, request)
    age_seconds = time.perf_counter() - t0
    blob = pipeline.bundle_to_bytes(bundle)
    roundtrip = pipeline.bundle_to_bytes(pipeline.bundle_from_bytes(blob))
    ok = train_seconds <= 120.0 and age_seconds <= 2.0 and roundtrip == blob
    _report(8, "desk-scale budget", ok,
            "train %.1fs, age %.2fs, bundle roundtrip=%s"
            % (train_seconds, age_seconds, roundtrip == blob))
