"""Frame-level newborn detection over normalized thermal video.

The reference scorer is a logistic model over six handcrafted frame
features, trained with class-weighted binary cross-entropy and momentum
SGD.  Externally produced score files can be swapped in through
``import_scores``, so the rest of the pipeline does not care where the
per-frame scores came from.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .gmm_norm import NormalizedVideo
from .thermal_io import AnnotationTrack

FEATURE_NAMES = (
    "hot_fraction",
    "top_percentile_mean",
    "blob_area_fraction",
    "blob_compactness",
    "global_mean",
    "global_std",
)
FEATURE_VERSION = 1
HOT_THRESHOLD = 0.9
TOP_PERCENTILE = 0.01
BCE_CLAMP = 1e-7
# Scores are kept strictly inside (0, 1) even when the logistic saturates.
_SCORE_MIN = 1e-12
_SCORE_MAX = 1.0 - 1e-12

NNB = 0
VNB = 1


def _mask_perimeter(mask: np.ndarray) -> int:
    """Count pixel edges between the mask and its complement or the border."""
    padded = np.pad(mask, 1, constant_values=False)
    inner = padded[1:-1, 1:-1]
    total = 0
    for neighbor in (
        padded[:-2, 1:-1],
        padded[2:, 1:-1],
        padded[1:-1, :-2],
        padded[1:-1, 2:],
    ):
        total += int(np.count_nonzero(inner & ~neighbor))
    return total


def frame_features(frame) -> np.ndarray:
    """Extract the six-feature vector from one normalized frame.

    Features, in order: fraction of pixels above 0.9, mean of the hottest
    1 percent of pixels, area fraction of the largest 4-connected blob of
    hot pixels, compactness of that blob (4*pi*area/perimeter^2, 0 when
    no blob exists), global mean, global standard deviation.
    """
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("frame must be a non-empty 2D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("frame contains non-finite pixels")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("frame must be normalized to [0, 1]")

    n = x.size
    hot = x > HOT_THRESHOLD
    hot_fraction = np.count_nonzero(hot) / n

    k = max(1, math.ceil(TOP_PERCENTILE * n))
    top_mean = float(np.partition(x.ravel(), n - k)[n - k :].mean())

    if hot_fraction > 0:
        labels, n_blobs = ndimage.label(hot)  # default structure is 4-connected
        areas = np.bincount(labels.ravel())[1:]
        biggest = int(np.argmax(areas))
        blob = labels == biggest + 1
        area = int(areas[biggest])
        perimeter = _mask_perimeter(blob)
        blob_area_fraction = area / n
        blob_compactness = 4.0 * np.pi * area / float(perimeter) ** 2
    else:
        blob_area_fraction = 0.0
        blob_compactness = 0.0

    return np.array(
        [
            hot_fraction,
            top_mean,
            blob_area_fraction,
            blob_compactness,
            float(x.mean()),
            float(x.std()),
        ]
    )


@dataclass(frozen=True)
class DatasetSample:
    features: np.ndarray
    label: int
    video_id: str
    frame_index: int


@dataclass(frozen=True)
class Dataset:
    """Labeled frame samples plus per-class counts (NNB, VNB)."""

    samples: tuple[DatasetSample, ...]
    counts: tuple[int, int]

    def __post_init__(self) -> None:
        n_nnb = sum(1 for s in self.samples if s.label == NNB)
        n_vnb = sum(1 for s in self.samples if s.label == VNB)
        if n_nnb + n_vnb != len(self.samples):
            raise ValueError("sample labels must be 0 (NNB) or 1 (VNB)")
        if (n_nnb, n_vnb) != tuple(self.counts):
            raise ValueError(f"counts {self.counts} disagree with samples ({n_nnb}, {n_vnb})")

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def features(self) -> np.ndarray:
        return np.stack([s.features for s in self.samples])

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


def _nnb_runs(vnb_mask: np.ndarray, cutoff: int):
    """Maximal runs of NNB frames within [0, cutoff)."""
    runs = []
    start = None
    for i in range(cutoff):
        if not vnb_mask[i]:
            if start is None:
                start = i
        elif start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, cutoff - 1))
    return runs


def build_dataset(
    videos,
    tracks,
    nnb_downsample_hz: float = 1.0,
) -> Dataset:
    """Assemble training samples from normalized videos and their annotations.

    Every frame inside a VNB interval becomes a positive sample.  Negative
    samples are the first frame of each floor(frame_rate / nnb_downsample_hz)
    stride within each maximal pre-birth NNB run; NNB frames at or after the
    annotated birth frame are dropped.  Without a birth annotation the whole
    NNB complement is strided.
    """
    videos = list(videos)
    tracks = list(tracks)
    if len(videos) != len(tracks):
        raise ValueError(f"{len(videos)} videos but {len(tracks)} annotation tracks")
    if nnb_downsample_hz <= 0:
        raise ValueError("nnb_downsample_hz must be positive")

    samples: list[DatasetSample] = []
    counts = [0, 0]
    for video, track in zip(videos, tracks):
        if not isinstance(track, AnnotationTrack):
            raise ValueError("tracks must be AnnotationTrack instances")
        n = video.n_frames
        if track.n_frames != n:
            raise ValueError(
                f"annotation covers {track.n_frames} frames but video "
                f"{video.video_id!r} has {n}"
            )
        vnb = track.vnb_mask()
        stride = max(1, int(math.floor(video.frame_rate / nnb_downsample_hz)))
        cutoff = n if track.tob_frame is None else min(track.tob_frame, n)
        for run_start, run_end in _nnb_runs(vnb, cutoff):
            for idx in range(run_start, run_end + 1, stride):
                samples.append(
                    DatasetSample(
                        features=frame_features(video.data[idx]),
                        label=NNB,
                        video_id=video.video_id,
                        frame_index=idx,
                    )
                )
                counts[NNB] += 1
        for start, end in track.vnb_intervals:
            for idx in range(start, end + 1):
                samples.append(
                    DatasetSample(
                        features=frame_features(video.data[idx]),
                        label=VNB,
                        video_id=video.video_id,
                        frame_index=idx,
                    )
                )
                counts[VNB] += 1
    return Dataset(samples=tuple(samples), counts=(counts[0], counts[1]))


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency class weights w_c = S / (C * s_c)."""
    arr = np.asarray(counts, dtype=np.int64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("counts must list at least two classes")
    if np.any(arr <= 0):
        empty = int(np.argmin(arr))
        raise ValueError(f"class {empty} has no samples")
    total = float(arr.sum())
    return total / (arr.size * arr.astype(np.float64))


def weighted_bce(y, y_hat, weights, eps: float = BCE_CLAMP):
    """Class-weighted binary cross-entropy, elementwise.

    Predictions are clamped to [eps, 1 - eps] before the logs, so the
    loss stays finite at 0 and 1.  ``weights`` is (w_nnb, w_vnb).
    """
    y_arr = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), eps, 1.0 - eps)
    w0, w1 = float(weights[0]), float(weights[1])
    loss = -(w1 * y_arr * np.log(p) + w0 * (1.0 - y_arr) * np.log(1.0 - p))
    if loss.ndim == 0:
        return float(loss)
    return loss


def detector_loss(weights: np.ndarray, bias: float, features, labels, class_w) -> float:
    """Mean weighted BCE of the logistic scorer on a batch."""
    p = expit(np.asarray(features, dtype=np.float64) @ weights + bias)
    return float(np.mean(weighted_bce(labels, p, class_w)))


def detector_gradient(weights: np.ndarray, bias: float, features, labels, class_w):
    """Analytic gradient of ``detector_loss`` wrt weights and bias."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    p = expit(x @ weights + bias)
    w0, w1 = float(class_w[0]), float(class_w[1])
    dz = (w0 * (1.0 - y) * p - w1 * y * (1.0 - p)) / y.size
    return x.T @ dz, float(dz.sum())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    epochs: int = 300
    batch_size: int = 64
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid training configuration")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class DetectorModel:
    """Logistic scorer over the six frame features."""

    weights: np.ndarray
    bias: float
    feature_version: int = FEATURE_VERSION
    epochs: int = 0
    learning_rate: float = 0.0
    final_loss: float = float("nan")

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} weights, got shape {w.shape}")
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def train_detector(dataset: Dataset, config: TrainConfig | None = None) -> DetectorModel:
    """Train the logistic scorer with momentum SGD on weighted BCE.

    Deterministic for a fixed config seed.  The full-dataset loss is
    evaluated after every epoch and the best-seen parameters are
    returned, so the final loss never exceeds the initial loss.
    """
    config = config or TrainConfig()
    if dataset.counts[NNB] == 0 or dataset.counts[VNB] == 0:
        raise ValueError("training requires samples from both classes")
    x = dataset.features
    y = dataset.labels.astype(np.float64)
    cw = class_weights(dataset.counts)

    w = np.zeros(x.shape[1])
    b = 0.0
    vel_w = np.zeros_like(w)
    vel_b = 0.0
    best_loss = detector_loss(w, b, x, y, cw)
    best = (w.copy(), b)

    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(y.size)
        for start in range(0, y.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            grad_w, grad_b = detector_gradient(w, b, x[idx], y[idx], cw)
            vel_w = config.momentum * vel_w - config.learning_rate * grad_w
            vel_b = config.momentum * vel_b - config.learning_rate * grad_b
            w = w + vel_w
            b = b + vel_b
        loss = detector_loss(w, b, x, y, cw)
        if loss < best_loss:
            best_loss = loss
            best = (w.copy(), b)

    return DetectorModel(
        weights=best[0],
        bias=best[1],
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        final_loss=best_loss,
    )


def score_frame(model: DetectorModel, frame) -> float:
    """Newborn-presence score for one normalized frame, strictly in (0, 1)."""
    f = frame_features(frame)
    z = float(f @ model.weights + model.bias)
    return float(np.clip(expit(z), _SCORE_MIN, _SCORE_MAX))


@dataclass(frozen=True)
class ScoreSeries:
    """Per-frame scores for one video."""

    scores: np.ndarray
    frame_rate: float
    video_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("scores must be a non-empty 1D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("scores must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("scores must lie in [0, 1]")
        if not math.isfinite(self.frame_rate) or self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "scores", arr)

    def __len__(self) -> int:
        return self.scores.size


def score_video(model: DetectorModel, video: NormalizedVideo) -> ScoreSeries:
    """Score every frame of a normalized video."""
    scores = np.array([score_frame(model, video.data[i]) for i in range(video.n_frames)])
    return ScoreSeries(scores=scores, frame_rate=video.frame_rate, video_id=video.video_id)


def export_scores(series: ScoreSeries) -> str:
    """Serialize a score series as 'frame,score' CSV text."""
    lines = ["frame,score"]
    for i, s in enumerate(series.scores):
        lines.append(f"{i},{float(s)!r}")
    return "\n".join(lines) + "\n"


def import_scores(text: str, frame_rate: float, video_id: str = "") -> ScoreSeries:
    """Parse 'frame,score' CSV text into a score series.

    Frames must be contiguous from 0 and scores must lie in [0, 1];
    gaps, reordering, and out-of-range values are rejected.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].strip().lower() != "frame,score":
        raise ValueError("score file must start with a 'frame,score' header")
    scores = []
    for expected, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"malformed score row: {line!r}")
        frame = int(parts[0])
        value = float(parts[1])
        if frame != expected:
            raise ValueError(f"score rows must be contiguous: expected frame {expected}, got {frame}")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"score {value} at frame {frame} outside [0, 1]")
        scores.append(value)
    if not scores:
        raise ValueError("score file has no rows")
    return ScoreSeries(scores=np.array(scores), frame_rate=frame_rate, video_id=video_id)


@dataclass(frozen=True)
class DetectorMetrics:
    """Confusion counts and summary metrics, VNB positive.

    ``degenerate`` lists the metrics whose denominator was zero; those
    metric values are reported as 0.
    """

    precision: float
    recall: float
    mcc: float
    tp: int
    tn: int
    fp: int
    fn: int
    degenerate: tuple[str, ...] = ()


def evaluate_detector(scores, labels, threshold: float = 0.5) -> DetectorMetrics:
    """Precision, recall, and MCC of thresholded scores against labels.

    A frame is predicted positive when its score is >= threshold.
    """
    s = scores.scores if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"scores shape {s.shape} does not match labels shape {y.shape}")
    if not np.all((y == NNB) | (y == VNB)):
        raise ValueError("labels must be 0 (NNB) or 1 (VNB)")
    pred = s >= threshold
    pos = y == VNB
    tp = int(np.count_nonzero(pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))

    degenerate = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    mcc_den = math.sqrt(float(tn + fn) * (fp + tp) * (tn + fp) * (fn + tp))
    if mcc_den > 0:
        mcc = (tn * tp - fp * fn) / mcc_den
    else:
        mcc = 0.0
        degenerate.append("mcc")
    return DetectorMetrics(
        precision=precision,
        recall=recall,
        mcc=mcc,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
        degenerate=tuple(degenerate),
    )


def model_to_json(model: DetectorModel) -> str:
    """Serialize a detector model to JSON text."""
    doc = {
        "weights": [float(w) for w in model.weights],
        "bias": float(model.bias),
        "feature_version": model.feature_version,
        "meta": {
            "epochs": model.epochs,
            "learning_rate": model.learning_rate,
            "final_loss": model.final_loss,
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def model_from_json(text: str) -> DetectorModel:
    """Parse a detector model from JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "weights" not in doc or "bias" not in doc:
        raise ValueError("model file must be an object with 'weights' and 'bias'")
    version = int(doc.get("feature_version", FEATURE_VERSION))
    if version != FEATURE_VERSION:
        raise ValueError(f"unsupported feature version {version}, expected {FEATURE_VERSION}")
    meta = doc.get("meta", {})
    return DetectorModel(
        weights=np.asarray(doc["weights"], dtype=np.float64),
        bias=float(doc["bias"]),
        feature_version=version,
        epochs=int(meta.get("epochs", 0)),
        learning_rate=float(meta.get("learning_rate", 0.0)),
        final_loss=float(meta.get("final_loss", float("nan"))),
    )
