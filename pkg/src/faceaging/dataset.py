"""Manifest / landmark / image ingestion and age binning.

The manifest is a CSV with header
``subject_id,age,gender,image_path,landmarks_path``.  Landmark files are
plain text, one "x y" pair per line after optional header lines (the
pts convention: lines whose first token is not numeric are skipped).
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import DEFAULT_BINNING
from .errors import (IoError, LandmarkOutOfBounds, MalformedLandmarks,
                     ParseError, RangeError, SchemaError)
from .geometry import NUM_LANDMARKS, Shape

MANIFEST_COLUMNS = ("subject_id", "age", "gender", "image_path", "landmarks_path")
GENDERS = ("male", "female")


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    age: int
    gender: str
    image_path: str
    landmarks_path: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple


@dataclass(frozen=True)
class AgeBinning:
    """Sorted, disjoint, contiguous closed year intervals."""

    boundaries: tuple = DEFAULT_BINNING

    def __post_init__(self):
        bins = tuple((int(lo), int(hi)) for lo, hi in self.boundaries)
        if not bins:
            raise RangeError("binning must contain at least one interval")
        for (lo, hi) in bins:
            if lo > hi:
                raise RangeError("empty bin interval [%d, %d]" % (lo, hi))
        for (_, hi), (lo2, _) in zip(bins, bins[1:]):
            if lo2 != hi + 1:
                raise RangeError("bins must be contiguous and sorted")
        object.__setattr__(self, "boundaries", bins)

    @property
    def num_groups(self):
        return len(self.boundaries)


@dataclass(frozen=True)
class FaceSample:
    pixels: np.ndarray  # height x width x 3, uint8
    shape: Shape
    age_group: int
    subject_id: str
    gender: str


def _numeric(token):
    try:
        return float(token)
    except ValueError:
        return None


def parse_landmarks(text):
    """Parse a 68-point landmark file into a Shape.

    Leading lines whose first token is non-numeric (pts headers, braces)
    are skipped; once points start, every line must be an "x y" pair.
    """
    points = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if _numeric(tokens[0]) is None:
            # header or footer line
            continue
        if len(tokens) != 2:
            raise ParseError("expected 'x y' pair, got %r" % raw)
        x, y = _numeric(tokens[0]), _numeric(tokens[1])
        if y is None:
            raise ParseError("non-numeric coordinate in %r" % raw)
        points.append((x, y))
    if len(points) != NUM_LANDMARKS:
        raise MalformedLandmarks("expected %d landmark points, found %d"
                                 % (NUM_LANDMARKS, len(points)))
    return Shape(np.array(points))


def load_landmarks(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_landmarks(fh.read())
    except OSError as exc:
        raise IoError("cannot read landmark file %r: %s" % (path, exc)) from exc


def _validate_entry(row, lineno):
    subject_id = row["subject_id"].strip()
    if not subject_id:
        raise SchemaError("row %d: empty subject_id" % lineno)
    try:
        age = int(row["age"])
    except ValueError as exc:
        raise SchemaError("row %d: non-integer age %r" % (lineno, row["age"])) from exc
    if not 1 <= age <= 120:
        raise RangeError("row %d: age %d outside [1, 120]" % (lineno, age))
    gender = row["gender"].strip()
    if gender not in GENDERS:
        raise SchemaError("row %d: gender must be one of %s, got %r"
                          % (lineno, GENDERS, gender))
    return ManifestEntry(subject_id, age, gender,
                         row["image_path"].strip(), row["landmarks_path"].strip())


def parse_manifest(text):
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError("manifest is empty (missing header)")
    missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames)
    if missing:
        raise SchemaError("manifest missing columns: %s" % sorted(missing))
    entries = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        entry = _validate_entry(row, lineno)
        key = (entry.subject_id, entry.image_path)
        if key in seen:
            raise SchemaError("duplicate (subject_id, image_path) pair %r" % (key,))
        seen.add(key)
        entries.append(entry)
    return Manifest(tuple(entries))


def load_manifest(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return parse_manifest(fh.read())
    except OSError as exc:
        raise IoError("cannot read manifest %r: %s" % (path, exc)) from exc


def save_manifest(manifest, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            writer.writerow([e.subject_id, e.age, e.gender, e.image_path,
                             e.landmarks_path])


def bin_age(age, binning):
    for idx, (lo, hi) in enumerate(binning.boundaries):
        if lo <= age <= hi:
            return idx
    lo = binning.boundaries[0][0]
    hi = binning.boundaries[-1][1]
    raise RangeError("age %d outside configured binning range [%d, %d]" % (age, lo, hi))


def load_image(path):
    """Decode an 8-bit image as RGB; grayscale is promoted by replication."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise IoError("cannot decode image %r: %s" % (path, exc)) from exc


def load_sample(entry, binning):
    pixels = load_image(entry.image_path)
    shape = load_landmarks(entry.landmarks_path)
    h, w = pixels.shape[:2]
    pts = shape.points
    if (pts[:, 0] < 0).any() or (pts[:, 0] >= w).any() \
            or (pts[:, 1] < 0).any() or (pts[:, 1] >= h).any():
        raise LandmarkOutOfBounds(
            "landmarks of %r fall outside the %dx%d raster" % (entry.image_path, w, h))
    return FaceSample(pixels=pixels, shape=shape,
                      age_group=bin_age(entry.age, binning),
                      subject_id=entry.subject_id, gender=entry.gender)
