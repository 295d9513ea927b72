"""Shared fixtures.

The 20-video suite and the variant comparison are expensive, so they are
built once per session and reused by the unit and acceptance tests.  The
build times are recorded because the end-to-end criterion has a runtime
budget.
"""

import time
from types import SimpleNamespace

import pytest

from thermotob import (
    annotation_from_truth,
    compare_normalizations,
    render_scene,
    scenario_suite,
)

SUITE_SEED = 2026


@pytest.fixture(scope="session")
def suite20():
    t0 = time.perf_counter()
    scenarios = scenario_suite(20, "both", seed=SUITE_SEED)
    videos, tracks, ids = [], [], []
    for sc in scenarios:
        video, truth = render_scene(sc)
        videos.append(video)
        tracks.append(annotation_from_truth(truth))
        ids.append(sc.label)
    seconds = time.perf_counter() - t0
    return SimpleNamespace(
        scenarios=scenarios, videos=videos, tracks=tracks, ids=ids, seconds=seconds
    )


@pytest.fixture(scope="session")
def comparison(suite20):
    t0 = time.perf_counter()
    outcomes = compare_normalizations(
        suite20.videos, suite20.tracks, video_ids=suite20.ids
    )
    seconds = time.perf_counter() - t0
    return SimpleNamespace(outcomes=outcomes, seconds=seconds)


@pytest.fixture(scope="session")
def small_scene():
    """One short delivery-room video with a visible-newborn window."""
    sc = scenario_suite(1, "delivery", seed=7, duration_s=45.0)[0]
    video, truth = render_scene(sc)
    return SimpleNamespace(
        scenario=sc, video=video, truth=truth, track=annotation_from_truth(truth)
    )
