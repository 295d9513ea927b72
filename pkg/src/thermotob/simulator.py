"""Synthetic thermal delivery-scene generator with exact ground truth.

Scenes are built from elliptical warm bodies over a cool background,
spatially smoothed, distorted (noise, drift, self-calibration jumps,
miscalibration), and quantized once into the 14-bit raw range.  The
renderer returns the video together with a GroundTruth carrying the
birth frame, per-frame visibility labels, and the newborn pixel mask,
so downstream estimates can be checked exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .thermal_io import (
    DEFAULT_CALIBRATION,
    DEFAULT_FRAME_RATE,
    AnnotationTrack,
    RoomType,
    ThermalFrame,
    ThermalVideo,
    celsius_to_raw,
    raw_to_celsius,
)

BACKGROUND_TEMP = 22.0
ADULT_SKIN_DELIVERY = 35.0
ADULT_SKIN_THEATRE = 34.0
NEWBORN_TEMP = 37.5
DISTRACTOR_TEMP_RANGE = (38.0, 42.0)


@dataclass(frozen=True)
class BodySpec:
    """An elliptical warm region: center/semi-axes in pixels, temp in degC."""

    name: str
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    temp_c: float

    def __post_init__(self) -> None:
        ax, ay = self.semi_axes
        if ax <= 0 or ay <= 0:
            raise ValueError(f"{self.name}: semi-axes must be positive")
        if not math.isfinite(self.temp_c):
            raise ValueError(f"{self.name}: temperature must be finite")


@dataclass(frozen=True)
class DistractorSpec:
    """A warm object (pot, towel pack) present during [start_s, end_s)."""

    name: str
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    temp_c: float
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        ax, ay = self.semi_axes
        if ax <= 0 or ay <= 0:
            raise ValueError(f"{self.name}: semi-axes must be positive")
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"{self.name}: needs 0 <= start < end")


@dataclass(frozen=True)
class DistortionConfig:
    """Additive degC distortions applied before the single quantization.

    Defaults keep the total excursion inside roughly +-1.5 degC: a slow
    piecewise-linear drift, one self-calibration jump, and mild pixel
    noise.  ``miscalibration_offset`` shifts the whole video uniformly.
    """

    noise_std: float = 0.15
    drift: tuple[tuple[float, float], ...] = ((0.0, -0.75), (60.0, 0.75))
    selfcal_jumps: tuple[tuple[float, float], ...] = ((45.0, 0.45),)
    miscalibration_offset: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.noise_std) or self.noise_std < 0:
            raise ValueError("noise_std must be finite and non-negative")
        for t, v in tuple(self.drift) + tuple(self.selfcal_jumps):
            if not (math.isfinite(t) and math.isfinite(v)):
                raise ValueError("drift and jump entries must be finite")
        if not math.isfinite(self.miscalibration_offset):
            raise ValueError("miscalibration offset must be finite")
        object.__setattr__(self, "drift", tuple(tuple(map(float, p)) for p in self.drift))
        object.__setattr__(
            self, "selfcal_jumps", tuple(tuple(map(float, p)) for p in self.selfcal_jumps)
        )


DISTORTION_NONE = DistortionConfig(
    noise_std=0.0, drift=(), selfcal_jumps=(), miscalibration_offset=0.0
)


def _default_bodies() -> tuple[BodySpec, ...]:
    return (
        BodySpec("mother", (84.0, 62.0), (20.0, 32.0), ADULT_SKIN_DELIVERY),
        BodySpec("provider_left", (35.0, 38.0), (11.0, 15.0), ADULT_SKIN_DELIVERY),
        BodySpec("provider_right", (134.0, 88.0), (10.0, 14.0), ADULT_SKIN_DELIVERY),
    )


def _default_regions() -> tuple[BodySpec, ...]:
    return (BodySpec("bed", (84.0, 67.0), (58.0, 50.0), 29.5),)


def _default_newborn() -> BodySpec:
    return BodySpec("newborn", (88.0, 84.0), (8.0, 12.0), NEWBORN_TEMP)


@dataclass(frozen=True)
class Scenario:
    """Full description of one synthetic recording.

    ``tob_s`` is None exactly when there are no visibility windows (a
    scene without a birth); otherwise the first window starts at
    ``tob_s``.
    """

    width: int = 168
    height: int = 126
    duration_s: float = 75.0
    frame_rate: float = DEFAULT_FRAME_RATE
    room_type: RoomType = RoomType.DELIVERY_ROOM
    background_temp: float = BACKGROUND_TEMP
    warm_regions: tuple[BodySpec, ...] = field(default_factory=_default_regions)
    bodies: tuple[BodySpec, ...] = field(default_factory=_default_bodies)
    newborn: BodySpec = field(default_factory=_default_newborn)
    tob_s: float | None = 30.0
    visibility: tuple[tuple[float, float], ...] = ((30.0, 45.0),)
    distractors: tuple[DistractorSpec, ...] = ()
    distortion: DistortionConfig = field(default_factory=DistortionConfig)
    smoothing_sigma: float = 1.2
    seed: int = 0
    label: str = ""

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8:
            raise ValueError("frame must be at least 8x8 pixels")
        if self.duration_s <= 0 or self.frame_rate <= 0:
            raise ValueError("duration and frame rate must be positive")
        object.__setattr__(self, "room_type", RoomType(self.room_type))
        windows = tuple((float(s), float(e)) for s, e in self.visibility)
        object.__setattr__(self, "visibility", windows)
        if (self.tob_s is None) != (len(windows) == 0):
            raise ValueError("tob_s must be set exactly when visibility windows exist")
        if self.tob_s is not None:
            if not 0 <= self.tob_s < self.duration_s:
                raise ValueError(f"tob_s {self.tob_s} outside [0, {self.duration_s})")
            if windows[0][0] != self.tob_s:
                raise ValueError("first visibility window must start at tob_s")
            prev_end = -1.0
            for s, e in windows:
                if not 0 <= s < e <= self.duration_s:
                    raise ValueError(f"visibility window ({s}, {e}) is invalid")
                if s < prev_end:
                    raise ValueError("visibility windows must be sorted and disjoint")
                prev_end = e
            if self.bodies and self.newborn.temp_c <= max(b.temp_c for b in self.bodies):
                raise ValueError("newborn must be warmer than every adult body")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing sigma cannot be negative")
        for d in self.distractors:
            if d.end_s > self.duration_s:
                raise ValueError(f"{d.name}: event ends after the recording")

    @property
    def n_frames(self) -> int:
        return max(1, int(math.floor(self.duration_s * self.frame_rate)))


@dataclass(frozen=True)
class GroundTruth:
    """Exact birth timing and per-frame labels for one rendered scene."""

    tob_frame: int | None
    tob_s: int | None
    vnb: np.ndarray
    newborn_mask: np.ndarray
    frame_rate: float

    def __post_init__(self) -> None:
        vnb = np.asarray(self.vnb, dtype=bool).copy()
        mask = np.asarray(self.newborn_mask, dtype=bool).copy()
        vnb.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "vnb", vnb)
        object.__setattr__(self, "newborn_mask", mask)

    @property
    def n_frames(self) -> int:
        return self.vnb.size

    def mask_for_frame(self, n: int) -> np.ndarray:
        """Newborn pixel mask at frame n; all-False while hidden."""
        if self.vnb[n]:
            return self.newborn_mask
        return np.zeros_like(self.newborn_mask)


def _ellipse_mask(height: int, width: int, center, semi_axes) -> np.ndarray:
    cx, cy = center
    ax, ay = semi_axes
    yy, xx = np.ogrid[:height, :width]
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def _check_bounds(spec, width: int, height: int) -> None:
    cx, cy = spec.center
    ax, ay = spec.semi_axes
    if cx - ax < 0 or cx + ax > width - 1 or cy - ay < 0 or cy + ay > height - 1:
        raise ValueError(
            f"entity {spec.name!r} extends outside the {width}x{height} frame"
        )


def _window_frames(window: tuple[float, float], frame_rate: float, n_frames: int):
    """Frame indices n with start <= n / frame_rate < end, clipped to range."""
    start_s, end_s = window
    first = int(math.ceil(start_s * frame_rate - 1e-9))
    last = int(math.ceil(end_s * frame_rate - 1e-9)) - 1
    return max(0, first), min(n_frames - 1, last)


def render_scene(scenario: Scenario) -> tuple[ThermalVideo, GroundTruth]:
    """Render a scenario into a raw video plus its ground truth.

    Temperature compositing takes the per-pixel maximum over overlapping
    entities, the field is smoothed spatially, distortions are added in
    degC, and the result is quantized exactly once.
    """
    h, w = scenario.height, scenario.width
    n_frames = scenario.n_frames
    fr = scenario.frame_rate

    for spec in scenario.warm_regions + scenario.bodies + (scenario.newborn,) + scenario.distractors:
        _check_bounds(spec, w, h)

    base = np.full((h, w), float(scenario.background_temp))
    for spec in scenario.warm_regions + scenario.bodies:
        base = np.maximum(base, np.where(_ellipse_mask(h, w, spec.center, spec.semi_axes), spec.temp_c, -np.inf))

    newborn_mask = _ellipse_mask(h, w, scenario.newborn.center, scenario.newborn.semi_axes)
    distractor_masks = [
        _ellipse_mask(h, w, d.center, d.semi_axes) for d in scenario.distractors
    ]

    vnb = np.zeros(n_frames, dtype=bool)
    for window in scenario.visibility:
        first, last = _window_frames(window, fr, n_frames)
        if first <= last:
            vnb[first : last + 1] = True

    active = np.zeros((len(scenario.distractors), n_frames), dtype=bool)
    for i, d in enumerate(scenario.distractors):
        first, last = _window_frames((d.start_s, d.end_s), fr, n_frames)
        if first <= last:
            active[i, first : last + 1] = True

    times = np.arange(n_frames) / fr
    dist = scenario.distortion
    if dist.drift:
        d_times = np.array([t for t, _ in dist.drift])
        d_values = np.array([v for _, v in dist.drift])
        order = np.argsort(d_times, kind="stable")
        offsets = np.interp(times, d_times[order], d_values[order])
    else:
        offsets = np.zeros(n_frames)
    for t_jump, step in dist.selfcal_jumps:
        offsets = offsets + step * (times >= t_jump)
    offsets = offsets + dist.miscalibration_offset

    def build_template(newborn_on: bool, active_ids: tuple[int, ...]) -> np.ndarray:
        field_c = base.copy()
        if newborn_on:
            field_c = np.maximum(field_c, np.where(newborn_mask, scenario.newborn.temp_c, -np.inf))
        for i in active_ids:
            field_c = np.maximum(
                field_c, np.where(distractor_masks[i], scenario.distractors[i].temp_c, -np.inf)
            )
        if scenario.smoothing_sigma > 0:
            field_c = ndimage.gaussian_filter(field_c, scenario.smoothing_sigma)
        return field_c

    cache: dict[tuple, np.ndarray] = {}
    rng = np.random.default_rng(scenario.seed)
    cal = DEFAULT_CALIBRATION
    frames = []
    for n in range(n_frames):
        key = (bool(vnb[n]), tuple(np.nonzero(active[:, n])[0].tolist()))
        if key not in cache:
            cache[key] = build_template(*key)
        temps = cache[key] + offsets[n]
        if dist.noise_std > 0:
            temps = temps + rng.normal(0.0, dist.noise_std, temps.shape)
        frames.append(ThermalFrame(celsius_to_raw(temps, cal)))

    video = ThermalVideo(
        frames=tuple(frames),
        frame_rate=fr,
        room_type=scenario.room_type,
        calibration=cal,
    )
    if vnb.any():
        tob_frame = int(np.nonzero(vnb)[0][0])
        tob_s = int(math.floor(tob_frame / fr))
    else:
        tob_frame = None
        tob_s = None
    truth = GroundTruth(
        tob_frame=tob_frame,
        tob_s=tob_s,
        vnb=vnb,
        newborn_mask=newborn_mask,
        frame_rate=fr,
    )
    return video, truth


def apply_miscalibration(video: ThermalVideo, offset_c: float) -> ThermalVideo:
    """Shift every temperature by a constant and requantize.

    A zero offset is the identity up to quantization.  Values are clamped
    to the raw range, so extreme offsets saturate rather than wrap.
    """
    if not math.isfinite(offset_c):
        raise ValueError("offset must be finite")
    cal = video.calibration
    frames = tuple(
        ThermalFrame(celsius_to_raw(raw_to_celsius(f.data, cal) + offset_c, cal))
        for f in video.frames
    )
    return ThermalVideo(
        frames=frames,
        frame_rate=video.frame_rate,
        room_type=video.room_type,
        calibration=cal,
    )


def annotation_from_truth(truth: GroundTruth) -> AnnotationTrack:
    """Convert rendered ground truth into an annotation track."""
    vnb = truth.vnb
    intervals = []
    start = None
    for i, flag in enumerate(vnb):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            intervals.append((start, i - 1))
            start = None
    if start is not None:
        intervals.append((start, len(vnb) - 1))
    return AnnotationTrack(
        fps=truth.frame_rate,
        n_frames=len(vnb),
        vnb_intervals=tuple(intervals),
        tob_frame=truth.tob_frame,
    )


def scenario_suite(
    n: int,
    room_mix: str = "both",
    seed: int = 0,
    duration_s: float = 75.0,
) -> list[Scenario]:
    """Draw ``n`` randomized scenarios, deterministic for a given seed.

    Births land uniformly inside the middle 60 percent of the recording.
    ``room_mix`` is 'both' (alternating 50/50), 'delivery', or 'theatre'.
    Adults run slightly cooler in theatre scenes; distractor events,
    drifts, jumps, and a per-video miscalibration are randomized within
    the default distortion band.
    """
    if n < 1:
        raise ValueError("suite size must be at least 1")
    if room_mix not in ("both", "delivery", "theatre"):
        raise ValueError(f"unknown room mix {room_mix!r}")
    rng = np.random.default_rng(seed)
    scenarios = []
    for i in range(n):
        if room_mix == "delivery" or (room_mix == "both" and i % 2 == 0):
            room = RoomType.DELIVERY_ROOM
            adult = ADULT_SKIN_DELIVERY
        else:
            room = RoomType.OPERATION_THEATRE
            adult = ADULT_SKIN_THEATRE

        tob = float(rng.uniform(0.2, 0.8) * duration_s)
        windows = [(tob, min(duration_s, tob + float(rng.uniform(8.0, 18.0))))]
        if rng.random() < 0.6 and windows[0][1] + 5.0 < duration_s:
            gap = float(rng.uniform(3.0, 8.0))
            start = windows[0][1] + gap
            if start < duration_s - 2.0:
                windows.append((start, min(duration_s, start + float(rng.uniform(4.0, 12.0)))))

        mx = 84.0 + float(rng.uniform(-5, 5))
        my = 62.0 + float(rng.uniform(-4, 4))
        bodies = (
            BodySpec("mother", (mx, my), (20.0 + float(rng.uniform(0, 3)), 32.0 + float(rng.uniform(0, 4))), adult),
            BodySpec("provider_left", (35.0 + float(rng.uniform(-4, 4)), 38.0 + float(rng.uniform(-4, 4))), (11.0, 15.0), adult),
            BodySpec("provider_right", (134.0 + float(rng.uniform(-4, 4)), 88.0 + float(rng.uniform(-4, 4))), (10.0, 14.0), adult),
        )
        newborn = BodySpec(
            "newborn",
            (mx + float(rng.uniform(-4, 4)), my + 20.0 + float(rng.uniform(-2, 2))),
            (8.0 + float(rng.uniform(0, 1.5)), 12.0 + float(rng.uniform(0, 2))),
            NEWBORN_TEMP,
        )
        regions = (
            BodySpec("bed", (84.0, 67.0), (58.0, 50.0), float(rng.uniform(28.5, 30.5))),
        )

        distractors = []
        for k in range(int(rng.integers(0, 3))):
            length = float(rng.uniform(6.0, 16.0))
            start = float(rng.uniform(2.0, max(3.0, duration_s - length - 2.0)))
            distractors.append(
                DistractorSpec(
                    name=f"pot_{k}",
                    center=(20.0 + float(rng.uniform(-3, 10)), 18.0 + float(rng.uniform(-3, 8))),
                    semi_axes=(float(rng.uniform(2.4, 3.4)), float(rng.uniform(2.4, 3.4))),
                    temp_c=float(rng.uniform(*DISTRACTOR_TEMP_RANGE)),
                    start_s=start,
                    end_s=min(duration_s, start + length),
                )
            )

        drift_mid = float(rng.uniform(0.25, 0.5)) * duration_s
        distortion = DistortionConfig(
            noise_std=float(rng.uniform(0.1, 0.2)),
            drift=(
                (0.0, float(rng.uniform(-0.9, 0.9))),
                (drift_mid, float(rng.uniform(-0.9, 0.9))),
                (duration_s, float(rng.uniform(-0.9, 0.9))),
            ),
            selfcal_jumps=tuple(
                (float(rng.uniform(5.0, duration_s - 5.0)), float(rng.choice([-1, 1])) * float(rng.uniform(0.3, 0.6)))
                for _ in range(int(rng.integers(0, 3)))
            ),
            miscalibration_offset=float(rng.uniform(-1.5, 1.5)),
        )

        scenarios.append(
            Scenario(
                duration_s=duration_s,
                room_type=room,
                warm_regions=regions,
                bodies=bodies,
                newborn=newborn,
                tob_s=tob,
                visibility=tuple(windows),
                distractors=tuple(distractors),
                distortion=distortion,
                seed=int(rng.integers(0, 2**31 - 1)),
                label=f"sim_{i:03d}",
            )
        )
    return scenarios


def scenario_to_json(scenario: Scenario) -> str:
    """Serialize a scenario to JSON text."""

    def body(spec: BodySpec) -> dict:
        return {
            "name": spec.name,
            "center": list(spec.center),
            "semi_axes": list(spec.semi_axes),
            "temp_c": spec.temp_c,
        }

    doc = {
        "width": scenario.width,
        "height": scenario.height,
        "duration_s": scenario.duration_s,
        "frame_rate": scenario.frame_rate,
        "room_type": scenario.room_type.name,
        "background_temp": scenario.background_temp,
        "warm_regions": [body(b) for b in scenario.warm_regions],
        "bodies": [body(b) for b in scenario.bodies],
        "newborn": body(scenario.newborn),
        "tob_s": scenario.tob_s,
        "visibility": [list(w) for w in scenario.visibility],
        "distractors": [
            {**body(d), "start_s": d.start_s, "end_s": d.end_s} for d in scenario.distractors
        ],
        "distortion": {
            "noise_std": scenario.distortion.noise_std,
            "drift": [list(p) for p in scenario.distortion.drift],
            "selfcal_jumps": [list(p) for p in scenario.distortion.selfcal_jumps],
            "miscalibration_offset": scenario.distortion.miscalibration_offset,
        },
        "smoothing_sigma": scenario.smoothing_sigma,
        "seed": scenario.seed,
        "label": scenario.label,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def scenario_from_json(text: str) -> Scenario:
    """Parse a scenario from JSON text."""
    doc = json.loads(text)

    def body(d: dict) -> BodySpec:
        return BodySpec(
            name=d["name"],
            center=tuple(d["center"]),
            semi_axes=tuple(d["semi_axes"]),
            temp_c=float(d["temp_c"]),
        )

    return Scenario(
        width=int(doc["width"]),
        height=int(doc["height"]),
        duration_s=float(doc["duration_s"]),
        frame_rate=float(doc["frame_rate"]),
        room_type=RoomType[doc["room_type"]],
        background_temp=float(doc["background_temp"]),
        warm_regions=tuple(body(b) for b in doc["warm_regions"]),
        bodies=tuple(body(b) for b in doc["bodies"]),
        newborn=body(doc["newborn"]),
        tob_s=None if doc["tob_s"] is None else float(doc["tob_s"]),
        visibility=tuple((float(a), float(b)) for a, b in doc["visibility"]),
        distractors=tuple(
            DistractorSpec(
                name=d["name"],
                center=tuple(d["center"]),
                semi_axes=tuple(d["semi_axes"]),
                temp_c=float(d["temp_c"]),
                start_s=float(d["start_s"]),
                end_s=float(d["end_s"]),
            )
            for d in doc["distractors"]
        ),
        distortion=DistortionConfig(
            noise_std=float(doc["distortion"]["noise_std"]),
            drift=tuple(tuple(p) for p in doc["distortion"]["drift"]),
            selfcal_jumps=tuple(tuple(p) for p in doc["distortion"]["selfcal_jumps"]),
            miscalibration_offset=float(doc["distortion"]["miscalibration_offset"]),
        ),
        smoothing_sigma=float(doc["smoothing_sigma"]),
        seed=int(doc["seed"]),
        label=str(doc.get("label", "")),
    )
