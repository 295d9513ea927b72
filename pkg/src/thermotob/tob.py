"""Time-of-birth estimation from per-frame score series.

Scores are smoothed with a causal moving-average FIR filter (zero
initial conditions) and the estimate is the first frame whose smoothed
score reaches the decision threshold, floored to whole seconds.  The
module also aggregates per-video errors, sweeps the false-positive rate
over thresholds, and runs side-by-side normalization comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import (
    Dataset,
    DetectorModel,
    ScoreSeries,
    TrainConfig,
    build_dataset,
    score_video,
    train_detector,
)
from .gmm_norm import (
    EmConfig,
    NormalizedVideo,
    RoomProfile,
    maxmin_normalize,
    normalize_pipeline,
)
from .thermal_io import AnnotationTrack, ThermalVideo

DEFAULT_GAMMA = 0.9
DEFAULT_FILTER_LENGTH = 25
NORMALIZATION_VARIANTS = ("gmm", "maxmin")


@dataclass(frozen=True)
class FirFilter:
    """Causal moving-average filter of the given length."""

    length: int

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError(f"filter length must be at least 1, got {self.length}")

    @property
    def coefficients(self) -> np.ndarray:
        return np.full(self.length, 1.0 / self.length)


def fir_smooth(series: ScoreSeries, k: int = DEFAULT_FILTER_LENGTH) -> ScoreSeries:
    """Causal moving average with zero initial conditions.

    Output n is the mean of inputs n-k+1..n, with indices below zero
    contributing zeros, so the output length equals the input length.
    """
    fir = FirFilter(k)
    window = np.ones(fir.length)
    n = len(series)
    smoothed = np.convolve(series.scores, window)[:n] / fir.length
    smoothed = np.clip(smoothed, 0.0, 1.0)
    return ScoreSeries(scores=smoothed, frame_rate=series.frame_rate, video_id=series.video_id)


@dataclass(frozen=True)
class TobEstimate:
    """First threshold crossing of a smoothed series, if any."""

    found: bool
    n_birth: int | None
    t_birth_s: int | None
    gamma: float


def estimate_tob(
    smoothed: ScoreSeries,
    gamma: float = DEFAULT_GAMMA,
    frame_rate: float | None = None,
) -> TobEstimate:
    """Earliest frame whose smoothed score reaches gamma, floored to seconds.

    ``frame_rate`` overrides the series rate when given.  A series that
    never reaches gamma yields found=False rather than an error.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    rate = smoothed.frame_rate if frame_rate is None else frame_rate
    if rate <= 0:
        raise ValueError("frame rate must be positive")
    hits = np.nonzero(smoothed.scores >= gamma)[0]
    if hits.size == 0:
        return TobEstimate(found=False, n_birth=None, t_birth_s=None, gamma=gamma)
    n_birth = int(hits[0])
    return TobEstimate(
        found=True,
        n_birth=n_birth,
        t_birth_s=int(math.floor(n_birth / rate)),
        gamma=gamma,
    )


def tob_error(estimate: TobEstimate, annotated_t_s: int) -> int:
    """Signed error in seconds, estimate minus annotation (positive is late)."""
    if not estimate.found:
        raise ValueError("no estimate was found for this video; aggregate via found_fraction")
    return int(estimate.t_birth_s) - int(annotated_t_s)


@dataclass(frozen=True)
class ErrorStats:
    """Aggregate of per-video signed errors.

    Quartiles and the mean are computed on absolute errors with linear
    quantile interpolation; ``errors`` keeps the signed values.
    """

    errors: tuple[float, ...]
    q1: float
    q2: float
    q3: float
    mean: float
    found_fraction: float


def error_stats(errors, found_count: int, total: int) -> ErrorStats:
    """Summarize signed per-video errors and the share of videos found."""
    errs = tuple(float(e) for e in errors)
    if not errs:
        raise ValueError("error_stats needs at least one error value")
    if total < 1 or not 0 <= found_count <= total:
        raise ValueError(f"invalid found_count/total: {found_count}/{total}")
    magnitudes = np.abs(np.asarray(errs))
    q1, q2, q3 = np.quantile(magnitudes, [0.25, 0.5, 0.75])
    return ErrorStats(
        errors=errs,
        q1=float(q1),
        q2=float(q2),
        q3=float(q3),
        mean=float(magnitudes.mean()),
        found_fraction=found_count / total,
    )


@dataclass(frozen=True)
class SweepPoint:
    gamma: float
    fpr: float


@dataclass(frozen=True)
class SweepResult:
    """FPR at each swept threshold; degenerate when no negatives exist."""

    points: tuple[SweepPoint, ...]
    degenerate: bool = False


def fpr_sweep(scores, labels, thresholds) -> SweepResult:
    """False-positive rate FP / (FP + TN) at each threshold.

    ``scores`` and ``labels`` should cover pre-birth NNB and VNB frames
    only (see ``AnnotationTrack.eval_mask``).  Thresholds must be sorted
    ascending; the resulting FPR column is non-increasing.
    """
    s = scores.scores if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"scores shape {s.shape} does not match labels shape {y.shape}")
    gammas = [float(g) for g in thresholds]
    if not gammas:
        raise ValueError("thresholds must be non-empty")
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("thresholds must be sorted ascending")
    negative = y == 0
    n_neg = int(np.count_nonzero(negative))
    if n_neg == 0:
        return SweepResult(
            points=tuple(SweepPoint(g, 0.0) for g in gammas), degenerate=True
        )
    points = tuple(
        SweepPoint(g, float(np.count_nonzero((s >= g) & negative)) / n_neg)
        for g in gammas
    )
    return SweepResult(points=points, degenerate=False)


def default_sweep_grid() -> tuple[float, ...]:
    """Thresholds 0.10..0.99 in 0.01 steps; 0.90 is always included."""
    grid = {i / 100.0 for i in range(10, 100)}
    grid.add(0.9)
    return tuple(sorted(grid))


def normalize_variant(
    variant: str,
    video: ThermalVideo,
    video_id: str = "",
    profile: RoomProfile | None = None,
    em_config: EmConfig | None = None,
    seed: int | None = None,
) -> NormalizedVideo:
    """Normalize one video under a named variant ('gmm' or 'maxmin')."""
    if variant == "gmm":
        return normalize_pipeline(
            video, profile=profile, config=em_config, seed=seed, video_id=video_id
        ).video
    if variant == "maxmin":
        return maxmin_normalize(video, video_id=video_id)
    raise ValueError(f"unknown normalization variant {variant!r}; expected one of {NORMALIZATION_VARIANTS}")


@dataclass(frozen=True)
class VideoOutcome:
    """Per-video result of the full pipeline."""

    video_id: str
    estimate: TobEstimate
    annotated_s: int | None
    error_s: int | None
    smoothed: ScoreSeries


@dataclass(frozen=True)
class VariantOutcome:
    """All per-video outcomes of one normalization variant plus aggregates.

    Carries the detector trained for the variant so callers can score
    additional material with the same reference model.
    """

    variant: str
    per_video: tuple[VideoOutcome, ...]
    stats: ErrorStats | None
    model: DetectorModel | None = None


def run_pipeline_video(
    model: DetectorModel,
    normalized: NormalizedVideo,
    track: AnnotationTrack | None,
    gamma: float = DEFAULT_GAMMA,
    filter_k: int = DEFAULT_FILTER_LENGTH,
) -> VideoOutcome:
    """Score, smooth, and estimate one already-normalized video."""
    series = score_video(model, normalized)
    smoothed = fir_smooth(series, filter_k)
    estimate = estimate_tob(smoothed, gamma)
    annotated = track.tob_seconds if track is not None else None
    error = (
        tob_error(estimate, annotated)
        if (estimate.found and annotated is not None)
        else None
    )
    return VideoOutcome(
        video_id=normalized.video_id,
        estimate=estimate,
        annotated_s=annotated,
        error_s=error,
        smoothed=smoothed,
    )


def _aggregate(per_video) -> ErrorStats | None:
    errors = [o.error_s for o in per_video if o.error_s is not None]
    found = sum(1 for o in per_video if o.estimate.found)
    if not errors:
        return None
    return error_stats(errors, found, len(per_video))


def compare_normalizations(
    videos,
    tracks,
    variants=NORMALIZATION_VARIANTS,
    train_videos=None,
    train_tracks=None,
    video_ids=None,
    train_config: TrainConfig | None = None,
    gamma: float = DEFAULT_GAMMA,
    filter_k: int = DEFAULT_FILTER_LENGTH,
    em_config: EmConfig | None = None,
    seed: int | None = None,
    nnb_downsample_hz: float = 1.0,
) -> list[VariantOutcome]:
    """Run the full pipeline once per normalization variant.

    Each variant normalizes the training corpus, trains a fresh scorer
    on it, then normalizes, scores, smooths, and estimates on the
    evaluation corpus.  Inputs and seeds are identical across variants,
    so rows are directly comparable; listing a variant twice yields
    identical rows.  Without an explicit training corpus the evaluation
    corpus itself is used for training.
    """
    videos = list(videos)
    tracks = list(tracks)
    if len(videos) != len(tracks):
        raise ValueError(f"{len(videos)} videos but {len(tracks)} tracks")
    names = list(variants)
    if not names:
        raise ValueError("at least one variant is required")
    if video_ids is None:
        video_ids = [f"video_{i:03d}" for i in range(len(videos))]
    train_videos = list(train_videos) if train_videos is not None else videos
    train_tracks = list(train_tracks) if train_tracks is not None else tracks

    outcomes = []
    for variant in names:
        train_norm = [
            normalize_variant(variant, v, f"train_{i:03d}", em_config=em_config, seed=seed)
            for i, v in enumerate(train_videos)
        ]
        dataset: Dataset = build_dataset(train_norm, train_tracks, nnb_downsample_hz)
        model = train_detector(dataset, train_config)
        per_video = tuple(
            run_pipeline_video(
                model,
                normalize_variant(variant, v, vid, em_config=em_config, seed=seed),
                track,
                gamma=gamma,
                filter_k=filter_k,
            )
            for v, track, vid in zip(videos, tracks, video_ids)
        )
        outcomes.append(
            VariantOutcome(
                variant=variant,
                per_video=per_video,
                stats=_aggregate(per_video),
                model=model,
            )
        )
    return outcomes


def outcome_report(outcome: VariantOutcome) -> dict:
    """JSON-ready evaluation report for one variant."""
    per_video = [
        {
            "id": o.video_id,
            "t_hat": None if not o.estimate.found else int(o.estimate.t_birth_s),
            "t_ann": None if o.annotated_s is None else int(o.annotated_s),
            "err": None if o.error_s is None else int(o.error_s),
        }
        for o in outcome.per_video
    ]
    stats = outcome.stats
    return {
        "variant": outcome.variant,
        "per_video": per_video,
        "q1": None if stats is None else stats.q1,
        "q2": None if stats is None else stats.q2,
        "q3": None if stats is None else stats.q3,
        "mean": None if stats is None else stats.mean,
        "found_fraction": (
            sum(1 for o in outcome.per_video if o.estimate.found) / len(outcome.per_video)
            if outcome.per_video
            else None
        ),
    }
