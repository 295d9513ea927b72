"""Acceptance gate.

Fourteen criteria: oracle equivalence for the numeric kernels, property
suites for the estimator invariants, and a simulated-corpus analogue of
the clinical evaluation.  Each test prints one PASS/FAIL line.
"""

import io
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from thermotob import (
    DEFAULT_CALIBRATION,
    DEFAULT_FILTER_LENGTH,
    DEFAULT_GAMMA,
    DELIVERY_PROFILE,
    THEATRE_PROFILE,
    annotation_from_truth,
    apply_miscalibration,
    class_weights,
    estimate_tob,
    evaluate_detector,
    fir_smooth,
    fit_gmm,
    fpr_sweep,
    normalize_pipeline,
    read_video,
    render_scene,
    scenario_suite,
    score_video,
    select_skin_component,
    write_video,
)
from thermotob.detector import ScoreSeries, detector_gradient, detector_loss
from thermotob.gmm_norm import GmmModel, SampleStats
from thermotob.simulator import DistractorSpec
from thermotob.thermal_io import RAW_MAX, RoomType, ThermalFrame, ThermalVideo
from thermotob.tob import default_sweep_grid, normalize_variant


def _check(capsys, code: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] {code} {detail}", flush=True)
    assert ok, f"{code} {detail}"


def test_a01_gmm_recovery(capsys):
    rng = np.random.default_rng(20260101)
    true_means = np.array([22.0, 30.0, 36.0])
    true_stds = np.array([1.0, 1.0, 0.5])
    true_weights = np.array([0.5, 0.3, 0.2])
    counts = (50000, 30000, 20000)
    values = np.concatenate(
        [rng.normal(m, s, c) for m, s, c in zip(true_means, true_stds, counts)]
    )
    t0 = time.perf_counter()
    model = fit_gmm(values, 3)
    seconds = time.perf_counter() - t0
    order = np.argsort(model.means)
    mean_err = np.abs(model.means[order] - true_means).max()
    weight_err = np.abs(model.weights[order] - true_weights).max()
    var_rel = np.abs(model.variances[order] / true_stds**2 - 1.0).max()
    ok = mean_err <= 0.1 and weight_err <= 0.02 and var_rel <= 0.10 and seconds < 5.0
    _check(
        capsys, "A01",
        ok,
        f"mixture recovery: mean err {mean_err:.4f} <= 0.1, weight err "
        f"{weight_err:.4f} <= 0.02, var rel {var_rel:.4f} <= 0.10, {seconds:.2f}s < 5s",
    )


def test_a02_em_monotone_and_closed(capsys):
    rng = np.random.default_rng(42)
    worst_drop = 0.0
    worst_closure = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 5))
        n = int(rng.integers(max(10 * m, 50), 800))
        centers = rng.uniform(15.0, 45.0, m)
        stds = rng.uniform(0.3, 3.0, m)
        assign = rng.integers(0, m, n)
        values = rng.normal(centers[assign], stds[assign])
        model = fit_gmm(values, m)
        history = np.asarray(model.history)
        if len(history) > 1:
            worst_drop = max(worst_drop, float(np.max(-np.diff(history))))
        worst_closure = max(worst_closure, abs(float(model.weights.sum()) - 1.0))
    ok = worst_drop <= 1e-9 and worst_closure <= 1e-9
    _check(
        capsys, "A02",
        ok,
        f"100 fits: max log-likelihood drop {worst_drop:.2e} <= 1e-9, "
        f"max weight closure error {worst_closure:.2e} <= 1e-9",
    )


def test_a03_shift_equivariance(capsys, suite20):
    offsets = (-20.0, 5.0, 30.0)
    worst = 0.0
    limit = None
    for video in suite20.videos[:10]:
        base = normalize_pipeline(video)
        lo, hi = base.bounds
        step = DEFAULT_CALIBRATION.scale / (hi - lo)  # one raw code, normalized
        limit = step if limit is None else limit
        for c in offsets:
            shifted = normalize_pipeline(apply_miscalibration(video, c))
            diff = float(np.abs(shifted.video.data - base.video.data).max())
            worst = max(worst, diff / step)
    ok = worst <= 1.0
    _check(
        capsys, "A03",
        ok,
        f"offsets {offsets}: worst normalized deviation {worst:.2e} quantization "
        f"steps <= 1 (step {limit:.2e})",
    )


def _component_model(weights, means, variances):
    return GmmModel(
        weights=np.asarray(weights, float),
        means=np.asarray(means, float),
        variances=np.asarray(variances, float),
        log_likelihood=-1.0,
        n_iter=1,
        converged=True,
        history=(-1.0,),
    )


def test_a04_selection_branches(capsys):
    stats = SampleStats(mean=26.0, variance=4.0, max=40.0, min=18.0, count=1000)
    cases = []
    # hottest disqualified by variance -> middle wins
    sel = select_skin_component(
        _component_model((0.5, 0.3, 0.2), (22, 30, 36), (1.0, 1.0, 9.0)), stats
    )
    cases.append(sel.chosen_index == 1 and not sel.fallback_used)
    # hottest disqualified by weight -> middle wins
    sel = select_skin_component(
        _component_model((0.55, 0.35, 0.10), (22, 30, 36), (1.0, 1.0, 0.3)), stats
    )
    cases.append(sel.chosen_index == 1 and not sel.fallback_used)
    # all constraints pass -> hottest wins
    sel = select_skin_component(
        _component_model((0.5, 0.3, 0.2), (22, 30, 36), (1.0, 1.0, 0.3)), stats
    )
    cases.append(sel.chosen_index == 2 and not sel.fallback_used)
    # nothing qualifies -> hottest mean with the fallback flag
    sel = select_skin_component(
        _component_model((0.05, 0.05, 0.9), (36, 30, 22), (9.0, 9.0, 9.0)),
        SampleStats(mean=26.0, variance=1.0, max=40.0, min=18.0, count=1000),
    )
    cases.append(sel.mu_hat == 36.0 and sel.fallback_used)
    ok = all(cases)
    _check(capsys, "A04", ok, f"selection rule branches: {cases}")


def test_a05_room_profiles_exact(capsys):
    ok = (
        DELIVERY_PROFILE.lower_offset == -5.0
        and DELIVERY_PROFILE.upper_offset == 10.0
        and THEATRE_PROFILE.lower_offset == -2.5
        and THEATRE_PROFILE.upper_offset == 12.5
    )
    _check(
        capsys, "A05",
        ok,
        "published range-of-interest offsets: delivery (-5, +10), theatre (-2.5, +12.5)",
    )


def test_a06_fir_oracle(capsys):
    from thermotob.tob import FirFilter

    rng = np.random.default_rng(6)
    k = DEFAULT_FILTER_LENGTH
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(30, 400))
        scores = rng.uniform(0.0, 1.0, n)
        out = fir_smooth(ScoreSeries(scores=scores, frame_rate=8.33), k)
        expected = np.array(
            [scores[max(0, i - k + 1) : i + 1].sum() / k for i in range(n)]
        )
        worst = max(worst, float(np.abs(out.scores - expected).max()))
    filt = FirFilter(k)
    defaults_ok = k == 25 and np.all(filt.coefficients == 1.0 / 25.0)
    ok = worst <= 1e-12 and defaults_ok
    _check(
        capsys, "A06",
        ok,
        f"moving average vs direct windowed sum: max |diff| {worst:.2e} <= 1e-12, "
        f"K=25 with taps 1/K",
    )


def test_a07_tob_arithmetic(capsys):
    scores = np.zeros(400)
    scores[250:] = 0.95
    est = estimate_tob(ScoreSeries(scores=scores, frame_rate=8.33), DEFAULT_GAMMA)
    hit = est.found and est.n_birth == 250 and est.t_birth_s == 30
    miss = estimate_tob(
        ScoreSeries(scores=np.full(100, 0.89), frame_rate=8.33), DEFAULT_GAMMA
    )
    ok = hit and not miss.found and DEFAULT_GAMMA == 0.9
    _check(
        capsys, "A07",
        ok,
        f"first crossing n=250 at 8.33 fps -> {est.t_birth_s} s (want 30); "
        f"sub-threshold series -> found={miss.found}",
    )


def test_a08_metric_oracles(capsys):
    rng = np.random.default_rng(8)
    agree = True
    for _ in range(1000):
        n = int(rng.integers(5, 60))
        scores = rng.uniform(0, 1, n)
        labels = rng.integers(0, 2, n)
        threshold = float(rng.uniform(0.1, 0.9))
        m = evaluate_detector(scores, labels, threshold)
        pred = scores >= threshold
        tp = int(np.sum(pred & (labels == 1)))
        tn = int(np.sum(~pred & (labels == 0)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        denom = (tn + fn) * (fp + tp) * (tn + fp) * (fn + tp)
        mcc = (tn * tp - fp * fn) / math.sqrt(denom) if denom else 0.0
        if (m.tp, m.tn, m.fp, m.fn) != (tp, tn, fp, fn):
            agree = False
            break
        if not (
            math.isclose(m.precision, precision, abs_tol=1e-12)
            and math.isclose(m.recall, recall, abs_tol=1e-12)
            and math.isclose(m.mcc, mcc, abs_tol=1e-12)
        ):
            agree = False
            break
    hand = evaluate_detector(
        np.array([0.9, 0.8, 0.7, 0.2, 0.1, 0.3]),
        np.array([1, 1, 0, 1, 0, 0]),
        0.5,
    )
    hand_ok = (
        (hand.tp, hand.tn, hand.fp, hand.fn) == (2, 2, 1, 1)
        and abs(hand.mcc - 1.0 / 3.0) <= 1e-9
    )
    ok = agree and hand_ok
    _check(
        capsys, "A08",
        ok,
        f"1000 random sets agree with confusion counts: {agree}; "
        f"TP=2 TN=2 FP=1 FN=1 -> MCC {hand.mcc:.10f} (want 1/3)",
    )


def test_a09_class_weights(capsys):
    balanced = class_weights((250, 250))
    counts = (78848, 20887)  # (NNB, VNB)
    w = class_weights(counts)
    total = sum(counts)
    hand = (total / (2 * counts[0]), total / (2 * counts[1]))
    ok = (
        balanced[0] == 1.0
        and balanced[1] == 1.0
        and abs(w[0] - hand[0]) <= 1e-9
        and abs(w[1] - hand[1]) <= 1e-9
        and abs(hand[0] - 0.6324510450487013) <= 1e-12
        and abs(hand[1] - 2.387489826207689) <= 1e-12
    )
    _check(
        capsys, "A09",
        ok,
        f"balanced -> (1, 1); counts {counts} -> ({w[0]:.10f}, {w[1]:.10f})",
    )


def test_a10_gradient_check(capsys):
    rng = np.random.default_rng(10)
    eps = 1e-6
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(10, 60))
        X = rng.normal(0.0, 1.0, (n, 6))
        y = rng.integers(0, 2, n).astype(float)
        w = rng.normal(0.0, 1.0, 6)
        b = float(rng.normal(0.0, 1.0))
        cw = (float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.3, 3.0)))
        gw, gb = detector_gradient(w, b, X, y, cw)
        for j in range(6):
            probe = w.copy()
            probe[j] += eps
            hi = detector_loss(probe, b, X, y, cw)
            probe[j] -= 2 * eps
            lo = detector_loss(probe, b, X, y, cw)
            fd = (hi - lo) / (2 * eps)
            worst = max(worst, abs(gw[j] - fd) / max(abs(fd), 1e-8))
        fd = (detector_loss(w, b + eps, X, y, cw) - detector_loss(w, b - eps, X, y, cw)) / (2 * eps)
        worst = max(worst, abs(gb - fd) / max(abs(fd), 1e-8))
    ok = worst <= 1e-5
    _check(
        capsys, "A10",
        ok,
        f"50 random points: max relative gradient error {worst:.2e} <= 1e-5",
    )


def test_a11_simulated_end_to_end(capsys, suite20, comparison):
    seconds = suite20.seconds + comparison.seconds
    by_variant = {oc.variant: oc for oc in comparison.outcomes}
    gmm, maxmin = by_variant["gmm"], by_variant["maxmin"]
    ok = (
        gmm.stats is not None
        and maxmin.stats is not None
        and gmm.stats.found_fraction == 1.0
        and gmm.stats.q2 <= 5.0
        and gmm.stats.q2 <= maxmin.stats.q2
        and seconds < 120.0
    )
    _check(
        capsys, "A11",
        ok,
        f"20-video suite: found {gmm.stats.found_fraction:.2f}, median |err| "
        f"gmm {gmm.stats.q2:.2f} s <= 5 s and <= maxmin {maxmin.stats.q2:.2f} s, "
        f"{seconds:.0f}s < 120s",
    )


def test_a12_fpr_sweep(capsys, suite20, comparison):
    gmm = next(oc for oc in comparison.outcomes if oc.variant == "gmm")
    pooled_scores = [v.smoothed.scores for v in gmm.per_video]
    pooled_masks = [(t.eval_mask(), t.vnb_mask()) for t in suite20.tracks]

    # two extra scenes with a large persistent heat source so false
    # positives actually occur before the birth (threshold-band frames
    # come from the filter ramp at the distractor onset)
    for sc in scenario_suite(2, "both", seed=77, duration_s=60.0):
        lamp = DistractorSpec(
            name="lamp", center=(20, 100), semi_axes=(9.0, 9.0), temp_c=40.0,
            start_s=2.0, end_s=60.0,
        )
        video, truth = render_scene(replace(sc, distractors=(lamp,)))
        track = annotation_from_truth(truth)
        smoothed = fir_smooth(score_video(gmm.model, normalize_variant("gmm", video, sc.label)))
        pooled_scores.append(smoothed.scores)
        pooled_masks.append((track.eval_mask(), track.vnb_mask()))

    scores, labels, pre_positive = [], [], 0
    for series, (eval_mask, vnb) in zip(pooled_scores, pooled_masks):
        scores.append(series[eval_mask])
        labels.append(vnb[eval_mask].astype(int))
        pre_positive += int(np.sum(series[eval_mask & ~vnb] >= 0.5))
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)

    grid = default_sweep_grid()
    result = fpr_sweep(scores, labels, grid)
    fprs = [p.fpr for p in result.points]
    monotone = all(a >= b - 1e-15 for a, b in zip(fprs, fprs[1:]))
    by_gamma = {p.gamma: p.fpr for p in result.points}
    strict = by_gamma[0.9] < by_gamma[0.5] if pre_positive else True
    ok = monotone and strict and not result.degenerate and pre_positive > 0
    _check(
        capsys, "A12",
        ok,
        f"sweep non-increasing over {len(grid)} thresholds: {monotone}; "
        f"{pre_positive} pre-birth positives, FPR(0.9)={by_gamma[0.9]:.4f} < "
        f"FPR(0.5)={by_gamma[0.5]:.4f}",
    )


def test_a13_container_round_trip(capsys):
    rng = np.random.default_rng(13)
    ok = True
    for _ in range(50):
        n = int(rng.integers(1, 5))
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        frames = tuple(
            ThermalFrame(rng.integers(0, RAW_MAX + 1, (h, w)).astype(np.uint16))
            for _ in range(n)
        )
        video = ThermalVideo(
            frames=frames,
            frame_rate=float(rng.uniform(1.0, 60.0)),
            room_type=RoomType(int(rng.integers(0, 2))),
        )
        sink = io.BytesIO()
        write_video(video, sink)
        blob = sink.getvalue()
        back = read_video(io.BytesIO(blob))
        again = io.BytesIO()
        write_video(back, again)
        if again.getvalue() != blob:
            ok = False
            break
    _check(capsys, "A13", ok, "50 random videos survive write -> read -> write byte-exactly")


def test_a14_run_determinism(capsys, tmp_path):
    from thermotob.cli import main

    corpus = tmp_path / "corpus"
    model = tmp_path / "model.json"
    assert main(["simulate", "--n", "2", "--out", str(corpus), "--seed", "33",
                 "--duration", "40"]) == 0
    assert main(["train", "--corpus", str(corpus), "--out", str(model)]) == 0
    outs = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        assert main(["run", "--corpus", str(corpus), "--model", str(model),
                     "--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = outs[0] == outs[1] and "report.json" in outs[0]
    _check(
        capsys, "A14",
        ok,
        f"two identical cmd_run invocations: {len(outs[0])} output files byte-identical",
    )
