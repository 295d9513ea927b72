"""Thermal video data types, binary container I/O, and temperature conversion.

The on-disk container (".thv") is little-endian throughout:

    offset  size  field
    0       8     magic b"THERMV01"
    8       4     u32 width
    12      4     u32 height
    16      4     u32 frame count N
    20      8     f64 frame rate (frames per second)
    28      1     u8 room type (0 = delivery room, 1 = operation theatre)
    29      8     f64 calibration scale (degC per raw unit)
    37      8     f64 calibration offset (degC at raw value 0)
    45      ...   N frames of u16 row-major pixels

Raw intensities occupy 14 bits (0..16383).  The raw-to-Celsius map is affine
and travels in the header so producers and consumers always agree on it.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"THERMV01"
RAW_MAX = 16383
HEADER = struct.Struct("<8sIIIdBdd")
HEADER_SIZE = HEADER.size  # 45 bytes

DEFAULT_FRAME_RATE = 8.33


class ContainerError(ValueError):
    """Raised for malformed, truncated, or out-of-range container data."""


class RoomType(enum.IntEnum):
    DELIVERY_ROOM = 0
    OPERATION_THEATRE = 1


@dataclass(frozen=True)
class CalibrationMap:
    """Affine raw-to-Celsius map: temperature = offset + scale * raw."""

    scale: float
    offset: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.scale) and math.isfinite(self.offset)):
            raise ValueError("calibration parameters must be finite")
        if self.scale <= 0:
            raise ValueError(f"calibration scale must be positive, got {self.scale}")


# 14-bit sensor span covering -40..125 degC.
DEFAULT_CALIBRATION = CalibrationMap(scale=165.0 / 16383.0, offset=-40.0)


def raw_to_celsius(raw, calibration: CalibrationMap = DEFAULT_CALIBRATION):
    """Map raw intensities to degrees Celsius.

    Accepts a scalar or an array; raises ValueError outside 0..16383.
    """
    arr = np.asarray(raw)
    if arr.size and (arr.min() < 0 or arr.max() > RAW_MAX):
        raise ValueError(f"raw intensity outside 0..{RAW_MAX}")
    out = calibration.offset + calibration.scale * arr.astype(np.float64)
    if arr.ndim == 0:
        return float(out)
    return out


def celsius_to_raw(celsius, calibration: CalibrationMap = DEFAULT_CALIBRATION):
    """Quantize temperatures to the nearest raw value, clamped to 0..16383.

    Rounds half away from zero, so a temperature midway between two raw
    steps maps to the larger raw value.
    """
    x = (np.asarray(celsius, dtype=np.float64) - calibration.offset) / calibration.scale
    r = np.copysign(np.floor(np.abs(x) + 0.5), x)
    r = np.clip(r, 0, RAW_MAX)
    if r.ndim == 0:
        return int(r)
    return r.astype(np.uint16)


@dataclass(frozen=True)
class ThermalFrame:
    """One raw frame, row-major uint16 pixels in 0..16383."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("frame data must be a non-empty 2D array")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("frame data must be integer valued")
        if arr.min() < 0 or arr.max() > RAW_MAX:
            raise ValueError(f"frame pixels must lie in 0..{RAW_MAX}")
        arr = arr.astype(np.uint16, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ThermalVideo:
    """An ordered frame sequence plus acquisition metadata."""

    frames: tuple[ThermalFrame, ...]
    frame_rate: float
    room_type: RoomType
    calibration: CalibrationMap = DEFAULT_CALIBRATION

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a video needs at least one frame")
        shape = frames[0].data.shape
        for i, f in enumerate(frames):
            if f.data.shape != shape:
                raise ValueError(
                    f"frame {i} has shape {f.data.shape}, expected {shape}"
                )
        if not math.isfinite(self.frame_rate) or self.frame_rate <= 0:
            raise ValueError(f"frame rate must be positive, got {self.frame_rate}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "room_type", RoomType(self.room_type))

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    def raw_stack(self) -> np.ndarray:
        """All frames as one (N, H, W) uint16 array."""
        return np.stack([f.data for f in self.frames])

    def temperatures(self) -> np.ndarray:
        """All frames in degC as one (N, H, W) float64 array."""
        return raw_to_celsius(self.raw_stack(), self.calibration)


def write_video(video: ThermalVideo, sink) -> int:
    """Serialize a video to a binary sink; returns the byte count written."""
    header = HEADER.pack(
        MAGIC,
        video.width,
        video.height,
        video.n_frames,
        video.frame_rate,
        int(video.room_type),
        video.calibration.scale,
        video.calibration.offset,
    )
    written = 0
    try:
        sink.write(header)
        written += len(header)
        for frame in video.frames:
            payload = np.ascontiguousarray(frame.data, dtype="<u2").tobytes()
            sink.write(payload)
            written += len(payload)
    except OSError as exc:
        raise OSError(f"container write failed at byte offset {written}: {exc}") from exc
    return written


def _read_exact(source, count: int, what: str) -> bytes:
    data = source.read(count)
    if len(data) != count:
        raise ContainerError(
            f"truncated container: expected {count} bytes for {what}, got {len(data)}"
        )
    return data


def read_video(source) -> ThermalVideo:
    """Parse a video from a binary source, validating the 14-bit pixel range."""
    raw_header = _read_exact(source, HEADER_SIZE, "header")
    magic, width, height, n_frames, frame_rate, room, scale, offset = HEADER.unpack(raw_header)
    if magic != MAGIC:
        raise ContainerError(f"bad container magic {magic!r}, expected {MAGIC!r}")
    if width == 0 or height == 0 or n_frames == 0:
        raise ContainerError("header declares an empty video")
    if not math.isfinite(frame_rate) or frame_rate <= 0:
        raise ContainerError(f"header frame rate {frame_rate} is not positive")
    try:
        room_type = RoomType(room)
        calibration = CalibrationMap(scale=scale, offset=offset)
    except ValueError as exc:
        raise ContainerError(str(exc)) from exc

    frame_bytes = 2 * width * height
    frames = []
    for i in range(n_frames):
        payload = _read_exact(source, frame_bytes, f"frame {i}")
        arr = np.frombuffer(payload, dtype="<u2").reshape(height, width)
        if arr.max() > RAW_MAX:
            flat = int(np.argmax(arr > RAW_MAX))
            row, col = divmod(flat, width)
            raise ContainerError(
                f"raw value {int(arr[row, col])} above {RAW_MAX} at frame {i}, "
                f"pixel ({row}, {col})"
            )
        frames.append(ThermalFrame(arr.astype(np.uint16)))
    return ThermalVideo(
        frames=tuple(frames),
        frame_rate=frame_rate,
        room_type=room_type,
        calibration=calibration,
    )


def sample_temperatures(video: ThermalVideo, interval_s: float = 30.0) -> np.ndarray:
    """Pool pixel temperatures from frames spaced ``interval_s`` seconds apart.

    Frame indices are 0, s, 2s, ... with s = floor(interval_s * frame_rate),
    clamped to at least 1.  Values are returned in frame order, then
    row-major pixel order, as float64 degC.
    """
    if not interval_s > 0:
        raise ValueError(f"sampling interval must be positive, got {interval_s}")
    stride = max(1, int(math.floor(interval_s * video.frame_rate)))
    cal = video.calibration
    parts = [
        raw_to_celsius(video.frames[i].data, cal).ravel()
        for i in range(0, video.n_frames, stride)
    ]
    return np.concatenate(parts)


def _normalize_intervals(intervals) -> tuple[tuple[int, int], ...]:
    """Sort intervals, merge adjacent ones, and reject overlaps."""
    cleaned = []
    for iv in intervals:
        start, end = int(iv[0]), int(iv[1])
        if start > end:
            raise ValueError(f"interval [{start}, {end}] has start after end")
        cleaned.append((start, end))
    cleaned.sort()
    merged: list[tuple[int, int]] = []
    for start, end in cleaned:
        if merged and start <= merged[-1][1]:
            raise ValueError(
                f"intervals [{merged[-1][0]}, {merged[-1][1]}] and "
                f"[{start}, {end}] overlap"
            )
        if merged and start == merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return tuple(merged)


@dataclass(frozen=True)
class AnnotationTrack:
    """Frame-level visibility annotation for one video.

    ``vnb_intervals`` are inclusive frame ranges where the newborn is
    visible; everything else is NNB.  ``tob_frame`` marks the annotated
    birth frame, when known.
    """

    fps: float
    n_frames: int
    vnb_intervals: tuple[tuple[int, int], ...] = field(default=())
    tob_frame: int | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.fps) or self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.n_frames < 1:
            raise ValueError("annotation needs at least one frame")
        intervals = _normalize_intervals(self.vnb_intervals)
        for start, end in intervals:
            if start < 0 or end > self.n_frames - 1:
                raise ValueError(
                    f"interval [{start}, {end}] outside frames 0..{self.n_frames - 1}"
                )
        object.__setattr__(self, "vnb_intervals", intervals)
        if self.tob_frame is not None:
            tob = int(self.tob_frame)
            if tob < 0 or tob > self.n_frames - 1:
                raise ValueError(
                    f"tob_frame {tob} outside frames 0..{self.n_frames - 1}"
                )
            object.__setattr__(self, "tob_frame", tob)

    @property
    def tob_seconds(self) -> int | None:
        """Annotated birth time in whole seconds, floor(tob_frame / fps)."""
        if self.tob_frame is None:
            return None
        return int(math.floor(self.tob_frame / self.fps))

    def vnb_mask(self) -> np.ndarray:
        """Boolean per-frame mask, True where the newborn is visible."""
        mask = np.zeros(self.n_frames, dtype=bool)
        for start, end in self.vnb_intervals:
            mask[start : end + 1] = True
        return mask

    def eval_mask(self) -> np.ndarray:
        """Frames that count toward detection metrics.

        Pre-birth NNB frames plus all VNB frames; post-birth NNB frames
        are excluded.  Without a ToB annotation every frame counts.
        """
        vnb = self.vnb_mask()
        if self.tob_frame is None:
            return np.ones(self.n_frames, dtype=bool)
        prebirth = np.arange(self.n_frames) < self.tob_frame
        return vnb | prebirth


def load_annotations(text: str) -> AnnotationTrack:
    """Parse an annotation JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"annotation document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("annotation document must be a JSON object")
    missing = {"fps", "n_frames", "vnb"} - doc.keys()
    if missing:
        raise ValueError(f"annotation document missing keys: {sorted(missing)}")
    return AnnotationTrack(
        fps=float(doc["fps"]),
        n_frames=int(doc["n_frames"]),
        vnb_intervals=tuple((int(a), int(b)) for a, b in doc["vnb"]),
        tob_frame=None if doc.get("tob_frame") is None else int(doc["tob_frame"]),
    )


def save_annotations(track: AnnotationTrack) -> str:
    """Serialize an annotation track to its JSON document form."""
    doc = {
        "fps": track.fps,
        "n_frames": track.n_frames,
        "vnb": [[start, end] for start, end in track.vnb_intervals],
        "tob_frame": track.tob_frame,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
