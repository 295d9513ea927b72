"""Command-line interface: simulate, calibrate, train, score, run, sweep.

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure
(some videos in a batch failed; the rest were processed).  Verbosity is
controlled by the THERMOTOB_LOG environment variable (DEBUG, INFO, ...).
All outputs are byte-identical across reruns with identical inputs and
seeds.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .detector import (
    build_dataset,
    export_scores,
    import_scores,
    model_from_json,
    model_to_json,
    score_video,
    train_detector,
    TrainConfig,
)
from .gmm_norm import (
    RoomProfile,
    SampleStats,
    calibrate_profile,
    fit_gmm,
    select_skin_component,
)
from .simulator import annotation_from_truth, render_scene, scenario_suite, scenario_to_json
from .thermal_io import (
    AnnotationTrack,
    load_annotations,
    read_video,
    sample_temperatures,
    save_annotations,
    write_video,
)
from .tob import (
    DEFAULT_FILTER_LENGTH,
    DEFAULT_GAMMA,
    default_sweep_grid,
    error_stats,
    estimate_tob,
    fir_smooth,
    fpr_sweep,
    normalize_variant,
    tob_error,
)

log = logging.getLogger("thermotob")


class _UsageError(Exception):
    """Command-line usage problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _profile_arg(text: str) -> RoomProfile:
    try:
        lower, upper = (float(p) for p in text.split(","))
        return RoomProfile(lower_offset=lower, upper_offset=upper)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"expected LOWER,UPPER with lower <= 0 < upper, got {text!r}: {exc}"
        ) from None


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _load_manifest(corpus: Path) -> list[dict]:
    manifest_path = corpus / "manifest.json"
    if not manifest_path.is_file():
        raise _UsageError(f"no manifest.json in corpus directory {corpus}")
    doc = json.loads(manifest_path.read_text())
    entries = sorted(doc.get("videos", []), key=lambda e: e["id"])
    if not entries:
        raise _UsageError(f"corpus {corpus} is empty")
    return entries


def _load_track(corpus: Path, entry: dict) -> AnnotationTrack:
    return load_annotations((corpus / entry["annotations"]).read_text())


def _load_video(corpus: Path, entry: dict):
    with open(corpus / entry["video"], "rb") as fh:
        return read_video(fh)


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise _UsageError("--n must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for scenario in scenario_suite(args.n, args.rooms, args.seed, args.duration):
        video, truth = render_scene(scenario)
        track = annotation_from_truth(truth)
        vid = scenario.label
        with open(out / f"{vid}.thv", "wb") as fh:
            write_video(video, fh)
        (out / f"{vid}.ann.json").write_text(save_annotations(track))
        (out / f"{vid}.truth.json").write_text(
            _dump_json(
                {
                    "tob_frame": truth.tob_frame,
                    "tob_s": truth.tob_s,
                    "frame_rate": truth.frame_rate,
                    "vnb": [list(iv) for iv in track.vnb_intervals],
                }
            )
        )
        (out / f"{vid}.scenario.json").write_text(scenario_to_json(scenario))
        entries.append(
            {
                "id": vid,
                "video": f"{vid}.thv",
                "annotations": f"{vid}.ann.json",
                "truth": f"{vid}.truth.json",
                "scenario": f"{vid}.scenario.json",
            }
        )
        log.info("rendered %s (%d frames)", vid, video.n_frames)
    (out / "manifest.json").write_text(
        _dump_json({"n": args.n, "seed": args.seed, "rooms": args.rooms, "videos": entries})
    )
    return 0


def cmd_calibrate(args) -> int:
    corpus = Path(args.corpus)
    pairs = []
    for entry in _load_manifest(corpus):
        video = _load_video(corpus, entry)
        pooled = sample_temperatures(video, args.interval)
        stats = SampleStats.from_values(pooled)
        model = fit_gmm(pooled, 3, seed=args.seed)
        selection = select_skin_component(model, stats)
        pairs.append((stats, selection.mu_hat))
        log.info("%s: mu_hat=%.2f mean=%.2f max=%.2f", entry["id"], selection.mu_hat, stats.mean, stats.max)
    profile = calibrate_profile(pairs)
    Path(args.out).write_text(
        _dump_json({"lower_offset": profile.lower_offset, "upper_offset": profile.upper_offset})
    )
    return 0


def _normalized_corpus(corpus: Path, entries, args):
    videos = []
    tracks = []
    for entry in entries:
        video = _load_video(corpus, entry)
        track = _load_track(corpus, entry)
        if track.n_frames != video.n_frames:
            raise ValueError(
                f"{entry['id']}: annotation covers {track.n_frames} frames, video has {video.n_frames}"
            )
        videos.append(
            normalize_variant(
                args.norm, video, entry["id"], profile=args.room_profile, seed=args.seed
            )
        )
        tracks.append(track)
    return videos, tracks


def cmd_train(args) -> int:
    corpus = Path(args.corpus)
    videos, tracks = _normalized_corpus(corpus, _load_manifest(corpus), args)
    dataset = build_dataset(videos, tracks, args.nnb_hz)
    config = TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed
    )
    model = train_detector(dataset, config)
    Path(args.out).write_text(model_to_json(model))
    log.info(
        "trained on %d samples (NNB=%d, VNB=%d), final loss %.6f",
        len(dataset), dataset.counts[0], dataset.counts[1], model.final_loss,
    )
    return 0


def _read_model(path: str):
    model_path = Path(path)
    if not model_path.is_file():
        raise _UsageError(f"model file {path} does not exist")
    return model_from_json(model_path.read_text())


def cmd_score(args) -> int:
    corpus = Path(args.corpus)
    model = _read_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in _load_manifest(corpus):
        video = _load_video(corpus, entry)
        normalized = normalize_variant(
            args.norm, video, entry["id"], profile=args.room_profile, seed=args.seed
        )
        series = score_video(model, normalized)
        (out / f"{entry['id']}.scores.csv").write_text(export_scores(series))
        log.info("scored %s", entry["id"])
    return 0


def _series_for_entry(corpus: Path, entry: dict, track: AnnotationTrack, model, args):
    """Per-frame scores for one video, either computed or imported."""
    if args.scores:
        text = (Path(args.scores) / f"{entry['id']}.scores.csv").read_text()
        series = import_scores(text, track.fps, entry["id"])
        if len(series) != track.n_frames:
            raise ValueError(
                f"{entry['id']}: score file has {len(series)} rows, annotation covers {track.n_frames} frames"
            )
        return series
    video = _load_video(corpus, entry)
    if track.n_frames != video.n_frames:
        raise ValueError(
            f"{entry['id']}: annotation covers {track.n_frames} frames, video has {video.n_frames}"
        )
    normalized = normalize_variant(
        args.norm, video, entry["id"], profile=args.room_profile, seed=args.seed
    )
    return score_video(model, normalized)


def _timeline_csv(raw, smoothed) -> str:
    lines = ["frame,score,smoothed"]
    for i, (a, b) in enumerate(zip(raw.scores, smoothed.scores)):
        lines.append(f"{i},{float(a)!r},{float(b)!r}")
    return "\n".join(lines) + "\n"


def _run_one(corpus: Path, entry: dict, model, args, out: Path) -> dict:
    track = _load_track(corpus, entry)
    series = _series_for_entry(corpus, entry, track, model, args)
    smoothed = fir_smooth(series, args.filter_k)
    (out / f"{entry['id']}.timeline.csv").write_text(_timeline_csv(series, smoothed))
    estimate = estimate_tob(smoothed, args.gamma)
    annotated = track.tob_seconds
    err = (
        tob_error(estimate, annotated)
        if estimate.found and annotated is not None
        else None
    )
    return {
        "id": entry["id"],
        "t_hat": None if not estimate.found else int(estimate.t_birth_s),
        "t_ann": None if annotated is None else int(annotated),
        "err": None if err is None else int(err),
    }


def cmd_run(args) -> int:
    corpus = Path(args.corpus)
    if not args.model and not args.scores:
        raise _UsageError("run requires --model or --scores")
    model = _read_model(args.model) if args.model else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = _load_manifest(corpus)

    rows: dict[str, dict] = {}
    failures: dict[str, str] = {}

    def work(entry):
        return entry["id"], _run_one(corpus, entry, model, args, out)

    if args.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as pool:
            futures = {pool.submit(work, e): e for e in entries}
            for future in concurrent.futures.as_completed(futures):
                entry = futures[future]
                try:
                    vid, row = future.result()
                    rows[vid] = row
                except Exception as exc:
                    failures[entry["id"]] = str(exc)
                    log.warning("video %s failed: %s", entry["id"], exc)
    else:
        for entry in entries:
            try:
                vid, row = work(entry)
                rows[vid] = row
            except Exception as exc:
                failures[entry["id"]] = str(exc)
                log.warning("video %s failed: %s", entry["id"], exc)

    ordered = [rows[vid] for vid in sorted(rows)]
    errors = [r["err"] for r in ordered if r["err"] is not None]
    found = sum(1 for r in ordered if r["t_hat"] is not None)
    stats = error_stats(errors, found, len(ordered)) if errors else None
    report = {
        "variant": "imported" if args.scores else args.norm,
        "per_video": ordered,
        "q1": None if stats is None else stats.q1,
        "q2": None if stats is None else stats.q2,
        "q3": None if stats is None else stats.q3,
        "mean": None if stats is None else stats.mean,
        "found_fraction": (found / len(ordered)) if ordered else None,
        "failures": [{"id": vid, "error": failures[vid]} for vid in sorted(failures)],
    }
    (out / "report.json").write_text(_dump_json(report))
    csv_lines = ["id,t_hat,t_ann,err"]
    for r in ordered:
        csv_lines.append(
            ",".join(
                [
                    r["id"],
                    "" if r["t_hat"] is None else str(r["t_hat"]),
                    "" if r["t_ann"] is None else str(r["t_ann"]),
                    "" if r["err"] is None else str(r["err"]),
                ]
            )
        )
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n")
    return 3 if failures else 0


def cmd_sweep(args) -> int:
    corpus = Path(args.corpus)
    if not args.model and not args.scores:
        raise _UsageError("sweep requires --model or --scores")
    model = _read_model(args.model) if args.model else None
    pooled_scores = []
    pooled_labels = []
    for entry in _load_manifest(corpus):
        track = _load_track(corpus, entry)
        series = _series_for_entry(corpus, entry, track, model, args)
        smoothed = fir_smooth(series, args.filter_k)
        mask = track.eval_mask()
        pooled_scores.append(smoothed.scores[mask])
        pooled_labels.append(track.vnb_mask()[mask].astype(int))
    result = fpr_sweep(
        np.concatenate(pooled_scores), np.concatenate(pooled_labels), default_sweep_grid()
    )
    lines = ["gamma,fpr"]
    for point in result.points:
        lines.append(f"{point.gamma!r},{point.fpr!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    if result.degenerate:
        log.warning("sweep is degenerate: no negative frames in the corpus")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="thermotob", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, norm=True):
        p.add_argument("--seed", type=int, default=0, help="deterministic seed")
        if norm:
            p.add_argument(
                "--norm", choices=("gmm", "maxmin"), default="gmm",
                help="normalization variant (default gmm)",
            )
            p.add_argument(
                "--room-profile", type=_profile_arg, default=None, metavar="LOWER,UPPER",
                help="override the per-room range-of-interest offsets",
            )

    p = sub.add_parser("simulate", help="render a seeded synthetic corpus")
    p.add_argument("--n", type=int, required=True, help="number of videos")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rooms", choices=("both", "delivery", "theatre"), default="both")
    p.add_argument("--duration", type=float, default=75.0, help="seconds per video")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="derive range-of-interest offsets from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="profile JSON path")
    p.add_argument("--interval", type=float, default=30.0, help="sampling spacing in seconds")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train the frame scorer on an annotated corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--nnb-hz", type=float, default=1.0, help="NNB downsampling rate")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-frame score CSVs for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")
    add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("run", help="estimate time of birth for every video in a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", help="trained model JSON")
    p.add_argument("--scores", help="directory of imported score CSVs")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--filter-k", type=int, default=DEFAULT_FILTER_LENGTH)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="false-positive rate over decision thresholds")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", help="trained model JSON")
    p.add_argument("--scores", help="directory of imported score CSVs")
    p.add_argument("--filter-k", type=int, default=DEFAULT_FILTER_LENGTH)
    p.add_argument("--out", required=True, help="output CSV path")
    add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("THERMOTOB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())
