"""Configuration defaults and the key = value config file format.

The same flat format drives training, synthesis and the CLI.  Values are
kept as strings by the parser; each consumer coerces the keys it knows
about.  Unknown keys are preserved so a config can be echoed verbatim
into a trained bundle.
"""

from .errors import ParseError

# Landmark index subsets (68-point annotation convention) used to build
# the four face regions; each region is a union of convex polygons.  Eyes
# include the brows so periocular texture is recoded with the eye itself,
# and the two eyes form one region.
REGION_POLYGONS = {
    "eyes": (tuple(range(17, 22)) + tuple(range(36, 42)),
             tuple(range(22, 27)) + tuple(range(42, 48))),
    "nose": (tuple(range(27, 36)),),
    "mouth": (tuple(range(48, 60)),),
}

# Overlaps between feature polygons are resolved in this priority order;
# skin is everything inside the face hull not claimed by a feature.
FEATURE_PRIORITY = ("eyes", "nose", "mouth")

REGION_NAMES = ("eyes", "nose", "mouth", "skin")

# Seven decade bins, [1,10] ... [61,70].
DEFAULT_BINNING = tuple((1 + 10 * k, 10 + 10 * k) for k in range(7))

DEFAULTS = {
    "frame_size": "100",
    "identity_dim": "10",
    "age_dim": "100",
    "max_sweeps": "200",
    "elbo_rel_tol": "1e-6",
    "seed": "0",
    "feather_px": "3.0",
    "max_support": "0",       # 0 means ceil(K/10)
    "lambda_ratio": "0.01",
    "kkt_tol": "1e-8",
    "binning": ",".join("%d-%d" % b for b in DEFAULT_BINNING),
}


def parse_config_text(text):
    """Parse ``key = value`` lines; '#' starts a comment; blanks ignored."""
    values = dict(DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("line %d: expected 'key = value', got %r" % (lineno, raw))
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def parse_binning_spec(spec):
    """Turn '1-10,11-20,...' into a tuple of (lo, hi) year intervals."""
    bins = []
    for part in spec.split(","):
        lo, _, hi = part.strip().partition("-")
        try:
            bins.append((int(lo), int(hi)))
        except ValueError as exc:
            raise ParseError("bad bin interval %r" % part) from exc
    return tuple(bins)
