import time

import pytest

from faceaging import pipeline, synthval

FRAME = 32

# Scorecard lines appended by the acceptance tests; echoed after the run
# so they survive output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance scorecard:")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def raster_set(tmp_path_factory):
    """210-face synthetic raster corpus: 15 identities (8 male, 7 female),
    7 age groups, 2 images per cell, 32x32 frame."""
    cfg = synthval.SynthConfig(
        d=FRAME * FRAME * 3, p=4, q=5, num_identities=15, num_groups=7,
        images_per_cell=2, sigma=0.01, seed=11, frame_size=FRAME,
        landmark_jitter=0.0)
    out = tmp_path_factory.mktemp("raster")
    manifest, truth = synthval.generate_raster_dataset(cfg, str(out))
    return {"config": cfg, "manifest": manifest, "truth": truth,
            "dir": str(out)}


@pytest.fixture(scope="session")
def trained(raster_set):
    """A bundle trained on the raster corpus, with wall-clock timing."""
    settings = pipeline.PipelineSettings(
        frame_size=FRAME, identity_dim=4, age_dim=5, max_sweeps=100,
        seed=0, feather_px=2.0)
    t0 = time.perf_counter()
    bundle = pipeline.train_bundle(raster_set["manifest"], settings)
    seconds = time.perf_counter() - t0
    return dict(raster_set, bundle=bundle, settings=settings,
                train_seconds=seconds)
