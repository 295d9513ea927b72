"""Adaptive temperature normalization around the skin band.

The normalization step pools temperatures from frames sampled at a fixed
spacing, fits a three-component 1D Gaussian mixture by expectation-
maximization, picks the component that looks like exposed skin, spans a
room-specific range of interest around its mean, and rescales every pixel
into [0, 1].  A per-frame max-min rescale is provided as the baseline
variant for comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .thermal_io import RoomType, ThermalVideo, sample_temperatures

# A component qualifies as skin when its variance is at most twice the
# pooled sample variance and it carries at least this much weight.
MIN_SKIN_WEIGHT = 0.15
SKIN_VARIANCE_FACTOR = 2.0


@dataclass(frozen=True)
class EmConfig:
    """Stopping and conditioning knobs for the EM fit."""

    max_iter: int = 200
    rel_tol: float = 1e-6
    variance_floor: float = 1e-4

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.rel_tol < 0 or self.variance_floor <= 0:
            raise ValueError("rel_tol must be >= 0 and variance_floor > 0")


@dataclass(frozen=True)
class GmmComponent:
    weight: float
    mean: float
    variance: float


@dataclass(frozen=True)
class GmmModel:
    """A fitted 1D Gaussian mixture.

    ``history`` records the log-likelihood after every E-step, including
    one final evaluation of the returned parameters, so monotonicity is
    checkable from the outside.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    n_iter: int
    converged: bool
    history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        if not (weights.shape == means.shape == variances.shape) or weights.ndim != 1:
            raise ValueError("weights, means, variances must be 1D and same length")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {weights.sum()}, expected 1")
        if np.any(variances <= 0):
            raise ValueError("all variances must be positive")
        for name, arr in (("weights", weights), ("means", means), ("variances", variances)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def components(self) -> tuple[GmmComponent, ...]:
        return tuple(
            GmmComponent(float(w), float(m), float(v))
            for w, m, v in zip(self.weights, self.means, self.variances)
        )


def _e_step(v: np.ndarray, weights, means, variances):
    """Responsibilities and total log-likelihood under the current parameters."""
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    diff = v[:, None] - means[None, :]
    log_joint = log_w[None, :] - 0.5 * (
        np.log(2.0 * np.pi * variances)[None, :] + diff * diff / variances[None, :]
    )
    peak = log_joint.max(axis=1, keepdims=True)
    log_norm = peak[:, 0] + np.log(np.exp(log_joint - peak).sum(axis=1))
    resp = np.exp(log_joint - log_norm[:, None])
    return resp, float(log_norm.sum())


def fit_gmm(
    values,
    n_components: int = 3,
    config: EmConfig | None = None,
    seed: int | None = None,
) -> GmmModel:
    """Fit a 1D Gaussian mixture by expectation-maximization.

    Initialization is deterministic: component i starts at the
    (2i+1)/(2M) quantile of the data, with variance var(v)/M and uniform
    weights.  ``seed`` is accepted for interface stability but unused by
    this initializer.  Iteration stops when the relative log-likelihood
    improvement drops below ``config.rel_tol`` or after ``config.max_iter``
    iterations; every M-step floors variances at ``config.variance_floor``.
    """
    config = config or EmConfig()
    v = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("samples must be finite")
    m = int(n_components)
    if m < 1:
        raise ValueError("need at least one component")
    if v.size < 10 * m:
        raise ValueError(f"need at least {10 * m} samples for {m} components, got {v.size}")
    if np.ptp(v) == 0.0:
        raise ValueError("all samples are identical; zero-variance data cannot be fitted")

    quantiles = (2.0 * np.arange(m) + 1.0) / (2.0 * m)
    means = np.quantile(v, quantiles)
    variances = np.full(m, max(float(np.var(v)) / m, config.variance_floor))
    weights = np.full(m, 1.0 / m)

    history: list[float] = []
    converged = False
    n_iter = 0
    ll_prev: float | None = None
    for _ in range(config.max_iter):
        resp, ll = _e_step(v, weights, means, variances)
        history.append(ll)
        if ll_prev is not None:
            denom = abs(ll_prev) if ll_prev != 0.0 else 1.0
            if (ll - ll_prev) < config.rel_tol * denom:
                converged = True
                break
        ll_prev = ll
        n_iter += 1
        mass = resp.sum(axis=0)
        alive = mass > 0
        safe_mass = np.where(alive, mass, 1.0)
        weights = mass / v.size
        means = np.where(alive, resp.T @ v / safe_mass, means)
        diff = v[:, None] - means[None, :]
        second = np.einsum("nk,nk->k", resp, diff * diff) / safe_mass
        variances = np.maximum(np.where(alive, second, variances), config.variance_floor)
    else:
        # Iteration cap reached; record the likelihood of the final parameters.
        _, ll = _e_step(v, weights, means, variances)
        history.append(ll)

    return GmmModel(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood=history[-1],
        n_iter=n_iter,
        converged=converged,
        history=tuple(history),
    )


@dataclass(frozen=True)
class SampleStats:
    """Summary statistics of the pooled temperature sample."""

    mean: float
    variance: float
    max: float
    min: float
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("stats need at least one sample")
        if self.variance < 0:
            raise ValueError("variance cannot be negative")
        if self.min > self.max:
            raise ValueError("min exceeds max")

    @classmethod
    def from_values(cls, values) -> "SampleStats":
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ValueError("stats need at least one sample")
        return cls(
            mean=float(v.mean()),
            variance=float(v.var()),
            max=float(v.max()),
            min=float(v.min()),
            count=int(v.size),
        )


@dataclass(frozen=True)
class ComponentCheck:
    """Per-component qualification outcome for skin selection."""

    index: int
    variance_ok: bool
    weight_ok: bool

    @property
    def qualifies(self) -> bool:
        return self.variance_ok and self.weight_ok


@dataclass(frozen=True)
class SkinSelection:
    mu_hat: float
    chosen_index: int
    fallback_used: bool
    diagnostics: tuple[ComponentCheck, ...]


def select_skin_component(model: GmmModel, stats: SampleStats) -> SkinSelection:
    """Pick the skin component: highest mean among those that qualify.

    A component qualifies when its variance is at most twice the pooled
    sample variance and its weight is at least 0.15.  If nothing
    qualifies, the highest-mean component is used and the selection is
    flagged as a fallback.  Equal means resolve to the lowest index.
    """
    checks = tuple(
        ComponentCheck(
            index=i,
            variance_ok=bool(var <= SKIN_VARIANCE_FACTOR * stats.variance),
            weight_ok=bool(w >= MIN_SKIN_WEIGHT),
        )
        for i, (w, var) in enumerate(zip(model.weights, model.variances))
    )
    pool = [c.index for c in checks if c.qualifies]
    fallback = not pool
    if fallback:
        pool = list(range(model.n_components))
    pool_means = np.asarray([model.means[i] for i in pool])
    chosen = pool[int(np.argmax(pool_means))]
    return SkinSelection(
        mu_hat=float(model.means[chosen]),
        chosen_index=chosen,
        fallback_used=fallback,
        diagnostics=checks,
    )


@dataclass(frozen=True)
class RoomProfile:
    """Range-of-interest offsets around the skin mean, in degC."""

    lower_offset: float
    upper_offset: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lower_offset) and math.isfinite(self.upper_offset)):
            raise ValueError("profile offsets must be finite")
        if self.lower_offset > 0:
            raise ValueError(f"lower offset must be <= 0, got {self.lower_offset}")
        if self.upper_offset <= 0:
            raise ValueError(f"upper offset must be > 0, got {self.upper_offset}")


DELIVERY_PROFILE = RoomProfile(lower_offset=-5.0, upper_offset=10.0)
THEATRE_PROFILE = RoomProfile(lower_offset=-2.5, upper_offset=12.5)


def default_profile(room_type: RoomType) -> RoomProfile:
    if RoomType(room_type) is RoomType.DELIVERY_ROOM:
        return DELIVERY_PROFILE
    return THEATRE_PROFILE


def roi_bounds(mu_hat: float, profile: RoomProfile) -> tuple[float, float]:
    """Range of interest (low, high) spanned around the skin mean."""
    return (mu_hat + profile.lower_offset, mu_hat + profile.upper_offset)


@dataclass(frozen=True)
class NormalizedVideo:
    """Pixel data rescaled into [0, 1], plus timing metadata."""

    data: np.ndarray
    frame_rate: float
    video_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] == 0:
            raise ValueError("normalized data must be a non-empty (N, H, W) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("normalized data must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("normalized data must lie in [0, 1]")
        if not math.isfinite(self.frame_rate) or self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def normalize_video(
    video: ThermalVideo, bounds: tuple[float, float], video_id: str = ""
) -> NormalizedVideo:
    """Clip temperatures to ``bounds`` and rescale linearly into [0, 1]."""
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise ValueError(f"bounds must satisfy low < high, got ({lo}, {hi})")
    temps = video.temperatures()
    data = np.clip((temps - lo) / (hi - lo), 0.0, 1.0)
    return NormalizedVideo(data=data, frame_rate=video.frame_rate, video_id=video_id)


def maxmin_normalize(video: ThermalVideo, video_id: str = "") -> NormalizedVideo:
    """Per-frame max-min rescale baseline; a constant frame maps to zeros."""
    temps = video.temperatures()
    lo = temps.min(axis=(1, 2), keepdims=True)
    hi = temps.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    data = np.where(span > 0, (temps - lo) / safe, 0.0)
    return NormalizedVideo(data=data, frame_rate=video.frame_rate, video_id=video_id)


@dataclass(frozen=True)
class NormalizationResult:
    """Normalized video plus every intermediate of the pipeline."""

    video: NormalizedVideo
    selection: SkinSelection
    model: GmmModel
    stats: SampleStats
    bounds: tuple[float, float]


def normalize_pipeline(
    video: ThermalVideo,
    profile: RoomProfile | None = None,
    config: EmConfig | None = None,
    seed: int | None = None,
    sample_interval_s: float = 30.0,
    video_id: str = "",
) -> NormalizationResult:
    """Sample, fit, select, and rescale one video.

    Without an explicit profile the room default is used (delivery
    -5/+10, theatre -2.5/+12.5).  Statistics are computed on the same
    sampled vector the mixture is fitted on.
    """
    profile = profile or default_profile(video.room_type)
    pooled = sample_temperatures(video, sample_interval_s)
    stats = SampleStats.from_values(pooled)
    model = fit_gmm(pooled, 3, config, seed)
    selection = select_skin_component(model, stats)
    bounds = roi_bounds(selection.mu_hat, profile)
    normalized = normalize_video(video, bounds, video_id)
    return NormalizationResult(
        video=normalized, selection=selection, model=model, stats=stats, bounds=bounds
    )


def _round_to_step(x: float, step: float) -> float:
    """Round to the nearest multiple of ``step``, halves rounding up."""
    return math.floor(x / step + 0.5) * step


def calibrate_profile(corpus, step: float = 2.5) -> RoomProfile:
    """Derive a room profile from (SampleStats, mu_hat) pairs.

    The lower offset is the median of mu_hat - mean, the upper offset the
    median of max - mu_hat, each rounded to the given step.  Raises on an
    empty corpus, or when the medians produce an invalid profile.
    """
    pairs = list(corpus)
    if not pairs:
        raise ValueError("calibration corpus is empty")
    if step <= 0:
        raise ValueError("rounding step must be positive")
    lower_gaps = [mu_hat - stats.mean for stats, mu_hat in pairs]
    upper_gaps = [stats.max - mu_hat for stats, mu_hat in pairs]
    lower = _round_to_step(float(np.median(lower_gaps)), step)
    upper = _round_to_step(float(np.median(upper_gaps)), step)
    return RoomProfile(lower_offset=-lower, upper_offset=upper)


def diagnostic_record(model: GmmModel, selection: SkinSelection) -> dict:
    """JSON-ready record of a fit and the selection made from it."""
    return {
        "weights": [float(w) for w in model.weights],
        "means": [float(m) for m in model.means],
        "variances": [float(v) for v in model.variances],
        "mu_hat": float(selection.mu_hat),
        "fallback": bool(selection.fallback_used),
    }
