"""Command-line entry point: train / age / decompose / synth / eval.

Exit codes: 0 success, 1 usage error, 2 data or numeric error.
Diagnostics go to stderr; machine-readable JSON reports to the
requested paths.
"""

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from . import hfa, pipeline, synthval
from .config import load_config
from .dataset import load_image, load_landmarks, load_manifest
from .errors import FaceAgingError, UsageError
from .geometry import WarpField
from .sparse import SolverStop


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="faceaging",
                     description="Face age progression toolkit")
    sub = parser.add_subparsers(dest="command")

    p_train = sub.add_parser("train", help="train an aging bundle")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out-bundle", required=True)

    p_age = sub.add_parser("age", help="age or rejuvenate a probe face")
    p_age.add_argument("--bundle", required=True)
    p_age.add_argument("--image", required=True)
    p_age.add_argument("--landmarks", required=True)
    p_age.add_argument("--gender", required=True, choices=("male", "female"))
    p_age.add_argument("--source-group", required=True, type=int)
    p_age.add_argument("--target-groups", required=True,
                       help="comma-separated target group indices")
    p_age.add_argument("--out-dir", required=True)
    p_age.add_argument("--no-shape-aging", action="store_true")
    p_age.add_argument("--feather", type=float, default=None)
    p_age.add_argument("--max-support", type=int, default=None)
    p_age.add_argument("--lambda-ratio", type=float, default=None)

    p_dec = sub.add_parser("decompose", help="visualize face components")
    p_dec.add_argument("--bundle", required=True)
    p_dec.add_argument("--image", required=True)
    p_dec.add_argument("--landmarks", required=True)
    p_dec.add_argument("--gender", required=True, choices=("male", "female"))
    p_dec.add_argument("--out-dir", required=True)

    p_syn = sub.add_parser("synth", help="generate a synthetic raster dataset")
    p_syn.add_argument("--config", required=True)
    p_syn.add_argument("--out-dir", required=True)

    p_eval = sub.add_parser("eval", help="proxy evaluation of a bundle")
    p_eval.add_argument("--bundle", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--max-probes", type=int, default=10)

    return parser


def _save_png(path, raster):
    arr = np.clip(np.asarray(raster, dtype=float), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def _cmd_train(args):
    settings = pipeline.PipelineSettings.from_config(load_config(args.config))
    manifest = load_manifest(args.manifest)
    bundle = pipeline.train_bundle(manifest, settings)
    pipeline.save_bundle(bundle, args.out_bundle)
    print("wrote bundle to %s" % args.out_bundle, file=sys.stderr)
    return 0


def _parse_groups(spec):
    try:
        groups = [int(g) for g in spec.split(",") if g.strip() != ""]
    except ValueError as exc:
        raise UsageError("bad --target-groups %r" % spec) from exc
    if not groups:
        raise UsageError("--target-groups must name at least one group")
    return groups


def _cmd_age(args):
    bundle = pipeline.load_bundle(args.bundle)
    image = load_image(args.image)
    landmarks = load_landmarks(args.landmarks)
    os.makedirs(args.out_dir, exist_ok=True)
    stop = None
    if args.max_support is not None or args.lambda_ratio is not None:
        max_support = args.max_support if args.max_support is not None else 1
        ratio = args.lambda_ratio if args.lambda_ratio is not None else 0.01
        stop = SolverStop(max_support=max_support, lambda_ratio=ratio)
    report = {}
    for target in _parse_groups(args.target_groups):
        request = pipeline.AgingRequest(
            image=image, landmarks=landmarks, gender=args.gender,
            source_group=args.source_group, target_group=target,
            apply_shape_aging=not args.no_shape_aging,
            feather_px=args.feather, stop=stop)
        raster, diagnostics = pipeline.age_face(bundle, request)
        out_path = os.path.join(args.out_dir, "aged_g%d.png" % target)
        _save_png(out_path, raster)
        report["aged_g%d" % target] = diagnostics
        print("wrote %s" % out_path, file=sys.stderr)
    with open(os.path.join(args.out_dir, "diagnostics.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return 0


def _cmd_decompose(args):
    bundle = pipeline.load_bundle(args.bundle)
    image = load_image(args.image)
    landmarks = load_landmarks(args.landmarks)
    model = bundle.models.get(args.gender)
    if model is None:
        raise UsageError("bundle has no model for gender %r" % args.gender)
    frame = bundle.frame_size
    tri = bundle.triangulation(args.gender)
    fld = WarpField(landmarks, bundle.canonical_shapes[args.gender], tri,
                    (frame, frame))
    vec = pipeline.raster_to_vector(fld.apply(pipeline.image_to_float(image)))
    parts = hfa.decompose(model, vec)
    os.makedirs(args.out_dir, exist_ok=True)
    sidecar = {}
    for name, comp in (("mean", parts.mean), ("identity", parts.identity),
                       ("age", parts.age), ("residual", parts.residual)):
        raster = pipeline.vector_to_raster(comp, frame)
        lo, hi = float(raster.min()), float(raster.max())
        span = hi - lo if hi > lo else 1.0
        _save_png(os.path.join(args.out_dir, name + ".png"),
                  (raster - lo) / span)
        sidecar[name] = {"offset": lo, "scale": span}
    with open(os.path.join(args.out_dir, "components.json"), "w",
              encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return 0


def _cmd_synth(args):
    values = load_config(args.config)
    cfg = synthval.SynthConfig(
        d=int(values["frame_size"]) ** 2 * 3,
        p=int(values["identity_dim"]),
        q=int(values["age_dim"]),
        num_identities=int(values.get("num_identities", "10")),
        num_groups=int(values.get("num_groups", "7")),
        images_per_cell=int(values.get("images_per_cell", "1")),
        sigma=float(values.get("sigma", "0.02")),
        seed=int(values["seed"]),
        frame_size=int(values["frame_size"]),
        landmark_jitter=float(values.get("landmark_jitter", "0.0")))
    manifest, _ = synthval.generate_raster_dataset(cfg, args.out_dir)
    print("wrote %d synthetic faces under %s"
          % (len(manifest.entries), args.out_dir), file=sys.stderr)
    return 0


def _cmd_eval(args):
    bundle = pipeline.load_bundle(args.bundle)
    manifest = load_manifest(args.manifest)
    from .dataset import load_sample
    frame = bundle.frame_size
    correct = 0
    total = 0
    probes = []
    for entry in manifest.entries:
        sample = load_sample(entry, bundle.binning)
        if sample.gender not in bundle.models:
            continue
        tri = bundle.triangulation(sample.gender)
        fld = WarpField(sample.shape, bundle.canonical_shapes[sample.gender],
                        tri, (frame, frame))
        vec = pipeline.raster_to_vector(
            fld.apply(pipeline.image_to_float(sample.pixels)))
        predicted = synthval.age_group_proxy(bundle, vec, sample.gender)
        correct += int(predicted == sample.age_group)
        total += 1
        if len(probes) < args.max_probes:
            probes.append((sample, vec))

    model_of = bundle.models
    aging = []
    for sample, vec in probes:
        gender = sample.gender
        tri = bundle.triangulation(gender)
        targets = [g for g in bundle.groups_for(gender) if g != sample.age_group]
        scores, predictions = [], []
        for target in targets:
            request = pipeline.AgingRequest(
                image=sample.pixels, landmarks=sample.shape, gender=gender,
                source_group=sample.age_group, target_group=target,
                apply_shape_aging=False)
            raster, _ = pipeline.age_face(bundle, request)
            fld = WarpField(sample.shape, bundle.canonical_shapes[gender],
                            tri, (frame, frame))
            vec_after = pipeline.raster_to_vector(fld.apply(raster))
            scores.append(synthval.identity_preservation_score(
                model_of[gender], vec, vec_after))
            predictions.append(synthval.age_group_proxy(bundle, vec_after, gender))
        ascending = [p for t, p in sorted(zip(targets, predictions))]
        aging.append({
            "subject_id": sample.subject_id,
            "source_group": sample.age_group,
            "targets": targets,
            "predicted_groups": predictions,
            "identity_scores": scores,
            "monotone": all(a <= b for a, b in zip(ascending, ascending[1:])),
        })

    report = {
        "num_faces": total,
        "age_proxy_self_accuracy": correct / total if total else None,
        "num_probes": len(aging),
        "identity_score_min": min((min(a["identity_scores"]) for a in aging
                                   if a["identity_scores"]), default=None),
        "monotonicity_rate": (sum(a["monotone"] for a in aging) / len(aging)
                              if aging else None),
        "probes": aging,
    }
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print("wrote report to %s" % args.report, file=sys.stderr)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "age": _cmd_age,
    "decompose": _cmd_decompose,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
}


def run(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_help(sys.stderr)
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except FaceAgingError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
