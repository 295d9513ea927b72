"""Time-of-birth detection in thermal video.

Three stages: adaptive mixture-based temperature normalization, a
logistic frame scorer over region features, and a smoothed threshold
crossing that yields the birth second.  A synthetic scene simulator
with ground truth supports end-to-end evaluation.
"""

from .thermal_io import (
    AnnotationTrack,
    CalibrationMap,
    ContainerError,
    DEFAULT_CALIBRATION,
    RAW_MAX,
    RoomType,
    ThermalFrame,
    ThermalVideo,
    celsius_to_raw,
    load_annotations,
    raw_to_celsius,
    read_video,
    sample_temperatures,
    save_annotations,
    write_video,
)
from .gmm_norm import (
    DELIVERY_PROFILE,
    EmConfig,
    GmmModel,
    NormalizationResult,
    NormalizedVideo,
    RoomProfile,
    SampleStats,
    SkinSelection,
    THEATRE_PROFILE,
    calibrate_profile,
    default_profile,
    fit_gmm,
    maxmin_normalize,
    normalize_pipeline,
    normalize_video,
    roi_bounds,
    select_skin_component,
)
from .detector import (
    Dataset,
    DetectorMetrics,
    DetectorModel,
    ScoreSeries,
    TrainConfig,
    build_dataset,
    class_weights,
    evaluate_detector,
    export_scores,
    frame_features,
    import_scores,
    model_from_json,
    model_to_json,
    score_frame,
    score_video,
    train_detector,
    weighted_bce,
)
from .tob import (
    DEFAULT_FILTER_LENGTH,
    DEFAULT_GAMMA,
    ErrorStats,
    FirFilter,
    SweepResult,
    TobEstimate,
    VariantOutcome,
    VideoOutcome,
    compare_normalizations,
    default_sweep_grid,
    error_stats,
    estimate_tob,
    fir_smooth,
    fpr_sweep,
    outcome_report,
    tob_error,
)
from .simulator import (
    DistortionConfig,
    GroundTruth,
    Scenario,
    annotation_from_truth,
    apply_miscalibration,
    render_scene,
    scenario_from_json,
    scenario_suite,
    scenario_to_json,
)

__version__ = "0.1.0"
