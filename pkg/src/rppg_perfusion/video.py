"""Frame ingestion, masks, motion compensation, skin segmentation, pyramids."""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    CorruptFrame,
    DegenerateLandmarks,
    DimensionMismatch,
    EmptyMask,
    InputError,
    MissingSidecar,
    TooSmall,
)

log = logging.getLogger(__name__)

FRAME_PATTERN = "frame_{:06d}.{}"
SIDECAR = "meta.json"
FRAME_SUFFIXES = (".png", ".ppm")

RAW_MAGIC = b"RPPGRAW1"
RAW_PREFIX = 48  # magic (8) + uint64 json length (8) + 32 reserved bytes

N_LANDMARKS = 68


@dataclass
class FrameSequence:
    """Frames stacked as a (T, H, W, 3) array sampled at `fs` Hz.

    Frames read from disk are uint8; pyramid levels are float32.
    """

    frames: np.ndarray
    fs: float

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise DimensionMismatch(f"expected (T, H, W, 3) frames, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise InputError("sequence needs at least one frame")
        if self.fs <= 0:
            raise InputError("frame rate must be positive")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration(self) -> float:
        return len(self) / self.fs


@dataclass(frozen=True)
class Registration:
    dx: int
    dy: int
    peak_ratio: float
    low_confidence: bool


# ---------------------------------------------------------------------------
# frame sources


def load_frame_sequence(source) -> FrameSequence:
    """Load a frame directory (with meta.json) or a raw RGB8 stream file."""
    source = Path(source)
    if source.is_dir():
        return _load_frame_directory(source)
    if source.is_file():
        return read_raw_stream(source)
    raise InputError(f"no such frame source: {source}")


def _read_sidecar(directory: Path) -> dict:
    path = directory / SIDECAR
    if not path.is_file():
        raise MissingSidecar(f"{path} not found")
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MissingSidecar(f"{path} is not valid JSON: {exc}") from exc
    if "fps" not in meta:
        raise MissingSidecar(f"{path} lacks the 'fps' key")
    return meta


def _load_frame_directory(directory: Path) -> FrameSequence:
    meta = _read_sidecar(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not files:
        raise CorruptFrame(f"no frames in {directory}")
    if "count" in meta and int(meta["count"]) != len(files):
        raise CorruptFrame(f"meta.json declares {meta['count']} frames, found {len(files)}")
    frames = []
    for path in files:
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as exc:
            raise CorruptFrame(f"cannot decode {path}: {exc}") from exc
        if frames and arr.shape != frames[0].shape:
            raise DimensionMismatch(f"{path.name} is {arr.shape}, expected {frames[0].shape}")
        frames.append(arr)
    h, w = frames[0].shape[:2]
    if ("width" in meta and int(meta["width"]) != w) or (
        "height" in meta and int(meta["height"]) != h
    ):
        raise DimensionMismatch(f"frames are {w}x{h}, meta.json declares otherwise")
    return FrameSequence(np.stack(frames), float(meta["fps"]))


def save_frame_directory(seq: FrameSequence, directory, fmt: str = "png") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = _as_uint8(seq.frames)
    for i, frame in enumerate(frames):
        Image.fromarray(frame).save(directory / FRAME_PATTERN.format(i, fmt))
    meta = {"width": seq.width, "height": seq.height, "fps": seq.fs, "count": len(seq)}
    (directory / SIDECAR).write_text(json.dumps(meta, indent=2) + "\n")
    return directory


def write_raw_stream(seq: FrameSequence, path) -> Path:
    path = Path(path)
    header = json.dumps(
        {"width": seq.width, "height": seq.height, "fps": seq.fs, "count": len(seq)},
        separators=(",", ":"),
    ).encode()
    prefix = RAW_MAGIC + struct.pack("<Q", len(header)) + bytes(RAW_PREFIX - 16)
    with open(path, "wb") as fh:
        fh.write(prefix)
        fh.write(header)
        fh.write(np.ascontiguousarray(_as_uint8(seq.frames)).tobytes())
    return path


def read_raw_stream(path) -> FrameSequence:
    data = Path(path).read_bytes()
    if len(data) < RAW_PREFIX or data[:8] != RAW_MAGIC:
        raise CorruptFrame(f"{path} is not a raw RGB8 stream")
    (n_header,) = struct.unpack("<Q", data[8:16])
    try:
        meta = json.loads(data[RAW_PREFIX : RAW_PREFIX + n_header])
        w, h, count, fps = int(meta["width"]), int(meta["height"]), int(meta["count"]), float(meta["fps"])
    except (ValueError, KeyError) as exc:
        raise CorruptFrame(f"bad raw stream header in {path}: {exc}") from exc
    payload = data[RAW_PREFIX + n_header :]
    frame_bytes = w * h * 3
    if len(payload) != count * frame_bytes:
        raise CorruptFrame(
            f"header declares {count} frames of {frame_bytes} bytes, "
            f"payload holds {len(payload) / frame_bytes:.2f}"
        )
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(count, h, w, 3).copy()
    return FrameSequence(frames, fps)


def _as_uint8(frames: np.ndarray) -> np.ndarray:
    if frames.dtype == np.uint8:
        return frames
    return np.clip(np.floor(frames + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# masks and landmarks


def load_mask(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """8-bit grayscale PNG; nonzero pixels are included."""
    try:
        with Image.open(path) as im:
            mask = np.asarray(im.convert("L")) > 0
    except OSError as exc:
        raise InputError(f"cannot read mask {path}: {exc}") from exc
    if shape is not None and mask.shape != tuple(shape):
        raise DimensionMismatch(f"mask {path} is {mask.shape}, frames are {tuple(shape)}")
    return mask


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def load_landmarks(path) -> np.ndarray:
    """Read `index,x,y` rows (68 per set).

    An optional leading `frame` column gives per-frame sets; the result is then
    (T, 68, 2), otherwise (68, 2).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    else:
        header = ["frame", "index", "x", "y"] if rows and len(rows[0]) == 4 else ["index", "x", "y"]
    try:
        cols = {name: i for i, name in enumerate(header)}
        idx = np.array([int(r[cols["index"]]) for r in rows])
        xy = np.array([[float(r[cols["x"]]), float(r[cols["y"]])] for r in rows])
        frame = np.array([int(r[cols["frame"]]) for r in rows]) if "frame" in cols else None
    except (KeyError, ValueError, IndexError) as exc:
        raise DegenerateLandmarks(f"malformed landmark file {path}: {exc}") from exc
    if frame is None:
        return _landmark_set(idx, xy, path)
    sets = [_landmark_set(idx[frame == f], xy[frame == f], path) for f in np.unique(frame)]
    return np.stack(sets)


def _landmark_set(idx, xy, path) -> np.ndarray:
    if len(idx) != N_LANDMARKS or sorted(idx.tolist()) != list(range(N_LANDMARKS)):
        raise DegenerateLandmarks(f"{path}: need exactly 68 landmarks indexed 0..67")
    out = np.empty((N_LANDMARKS, 2))
    out[idx] = xy
    return out


def save_landmarks(points: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x", "y"])
        for i, (x, y) in enumerate(points):
            writer.writerow([i, f"{x:.3f}", f"{y:.3f}"])


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """(y0, y1, x0, x1) half-open bounding box of the set pixels."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("mask has no set pixels")
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


# ---------------------------------------------------------------------------
# averaging


def mean_rgb_over_mask(frame: np.ndarray, mask: np.ndarray) -> tuple[float, float, float]:
    if frame.shape[:2] != mask.shape:
        raise DimensionMismatch(f"frame {frame.shape[:2]} vs mask {mask.shape}")
    if not mask.any():
        raise EmptyMask("mask has no set pixels")
    r, g, b = frame[mask].astype(float).mean(axis=0)
    return float(r), float(g), float(b)


def mean_rgb_trace(frames: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-frame channel means over `mask`, shape (3, T).

    `mask` is either (H, W) or per-frame (T, H, W).
    """
    if mask.shape[-2:] != frames.shape[1:3]:
        raise DimensionMismatch(f"frames {frames.shape[1:3]} vs mask {mask.shape[-2:]}")
    if mask.ndim == 2:
        if not mask.any():
            raise EmptyMask("mask has no set pixels")
        return frames[:, mask].astype(float).mean(axis=1).T
    counts = mask.sum(axis=(1, 2))
    if np.any(counts == 0):
        raise EmptyMask("per-frame mask empty in at least one frame")
    sums = np.einsum("thwc,thw->tc", frames.astype(float), mask.astype(float))
    return (sums / counts[:, None]).T


# ---------------------------------------------------------------------------
# registration


def _gray(frame: np.ndarray) -> np.ndarray:
    return frame.astype(float).mean(axis=-1)


REGISTRATION_MARGIN = 16  # context pixels around the mask's bounding box
REGISTRATION_CUTOFF = 0.15  # cycles/pixel, Gaussian weight on the cross-power spectrum


def register_translation(
    reference: np.ndarray,
    moving: np.ndarray,
    mask: np.ndarray,
    min_ratio: float = 2.0,
    margin: int = REGISTRATION_MARGIN,
) -> Registration:
    """Integer shift (dx, dy) that realigns `moving` onto `reference`.

    Band-limited phase correlation over the bounding box of `mask` grown by
    `margin` pixels. Without the margin, content shifted out of a tight crop
    pulls the peak toward zero shift; the low-pass weight keeps pixel noise
    (where smooth skin texture has no energy) from flattening the peak.
    The confidence measure is the ratio of the correlation peak to the
    strongest competing local maximum; below `min_ratio` the result is
    (0, 0) and flagged low-confidence.
    """
    if reference.shape != moving.shape:
        raise DimensionMismatch(f"{reference.shape} vs {moving.shape}")
    if mask.shape != reference.shape[:2]:
        raise DimensionMismatch(f"mask {mask.shape} vs frame {reference.shape[:2]}")
    if mask.sum() < 64:
        raise EmptyMask("registration mask needs at least 64 pixels")
    y0, y1, x0, x1 = mask_bbox(mask)
    height, width = mask.shape
    y0, x0 = max(0, y0 - margin), max(0, x0 - margin)
    y1, x1 = min(height, y1 + margin), min(width, x1 + margin)
    a = _gray(reference[y0:y1, x0:x1])
    b = _gray(moving[y0:y1, x0:x1])
    taper = np.outer(np.hanning(a.shape[0]), np.hanning(a.shape[1]))
    a = (a - a.mean()) * taper
    b = (b - b.mean()) * taper
    cross = np.fft.fft2(b) * np.conj(np.fft.fft2(a))
    mag = np.abs(cross)
    cross = np.divide(cross, mag, out=np.zeros_like(cross), where=mag > 1e-12)
    fy = np.fft.fftfreq(a.shape[0])[:, None]
    fx = np.fft.fftfreq(a.shape[1])[None, :]
    cross *= np.exp(-(fx**2 + fy**2) / (2.0 * REGISTRATION_CUTOFF**2))
    surface = np.real(np.fft.ifft2(cross))

    peak_idx = np.unravel_index(np.argmax(surface), surface.shape)
    peak = surface[peak_idx]
    local_max = surface == ndimage.maximum_filter(surface, size=3, mode="wrap")
    local_max[peak_idx] = False
    rivals = surface[local_max]
    runner_up = rivals.max() if rivals.size else 0.0
    ratio = float(peak / runner_up) if runner_up > 0 else float("inf")
    if not peak > 0 or ratio < min_ratio:
        return Registration(0, 0, ratio, True)

    dy, dx = (int(p) for p in peak_idx)
    h, w = surface.shape
    if dy >= (h + 1) // 2:
        dy -= h
    if dx >= (w + 1) // 2:
        dx -= w
    # the peak sits at the displacement of `moving`; undo it
    return Registration(-dx, -dy, ratio, False)


def shift_frame(frame: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate by whole pixels, replicating edge pixels into the gap."""
    if dx == 0 and dy == 0:
        return frame
    h, w = frame.shape[:2]
    pad = max(abs(dx), abs(dy))
    padded = np.pad(frame, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    y0 = pad - dy
    x0 = pad - dx
    return padded[y0 : y0 + h, x0 : x0 + w]


def motion_compensate(seq: FrameSequence, mask: np.ndarray) -> tuple[FrameSequence, list[Registration]]:
    """Register every frame against the first one over the mask's bounding box."""
    ref = seq.frames[0]
    out = np.empty_like(seq.frames)
    regs = []
    for i, frame in enumerate(seq.frames):
        reg = register_translation(ref, frame, mask) if i else Registration(0, 0, float("inf"), False)
        if reg.low_confidence:
            log.warning("frame %d: low-confidence registration (ratio %.2f)", i, reg.peak_ratio)
        out[i] = shift_frame(frame, reg.dx, reg.dy)
        regs.append(reg)
    return FrameSequence(out, seq.fs), regs


# ---------------------------------------------------------------------------
# skin segmentation

CB_RANGE = (77.0, 127.0)
CR_RANGE = (133.0, 173.0)


def rgb_to_ycbcr(frame: np.ndarray) -> np.ndarray:
    """Full-range BT.601 conversion."""
    rgb = frame.astype(float)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def skin_segment(frame: np.ndarray) -> np.ndarray:
    ycc = rgb_to_ycbcr(frame)
    cb, cr = ycc[..., 1], ycc[..., 2]
    return (cb >= CB_RANGE[0]) & (cb <= CB_RANGE[1]) & (cr >= CR_RANGE[0]) & (cr <= CR_RANGE[1])


# ---------------------------------------------------------------------------
# gaussian pyramid


def _gauss5() -> np.ndarray:
    x = np.arange(-2, 3, dtype=float)
    k = np.exp(-0.5 * x**2)
    return k / k.sum()


_KERNEL = _gauss5()


def pyramid_reduce(frames: np.ndarray) -> np.ndarray:
    """Blur (5x5 Gaussian, sigma 1) and keep every second row and column.

    Works on (..., H, W, C) arrays; odd trailing rows/columns are dropped so
    each dimension is floor-halved.
    """
    img = np.asarray(frames, dtype=np.float64)
    h_ax, w_ax = img.ndim - 3, img.ndim - 2
    img = ndimage.convolve1d(img, _KERNEL, axis=h_ax, mode="reflect")
    img = ndimage.convolve1d(img, _KERNEL, axis=w_ax, mode="reflect")
    h2, w2 = img.shape[h_ax] // 2, img.shape[w_ax] // 2
    return img[..., 0 : 2 * h2 : 2, 0 : 2 * w2 : 2, :]


def pyramid_dims(height: int, width: int) -> list[tuple[int, int]]:
    dims = [(height, width)]
    while dims[-1][0] >= 2 and dims[-1][1] >= 2:
        h, w = dims[-1]
        dims.append((h // 2, w // 2))
    return dims


def choose_pyramid_level(height: int, width: int, target_px: int = 10000) -> int:
    """Level whose pixel count is closest to `target_px`; ties to the larger image."""
    if height < 2 or width < 2:
        raise TooSmall(f"{width}x{height} is too small for a pyramid")
    dims = pyramid_dims(height, width)
    costs = [abs(h * w - target_px) for h, w in dims]
    return int(np.argmin(costs))


def pyramid_downscale(seq: FrameSequence, target_px: int = 10000, chunk: int = 64) -> FrameSequence:
    level = choose_pyramid_level(seq.height, seq.width, target_px)
    if level == 0:
        return FrameSequence(seq.frames.astype(np.float32), seq.fs)
    parts = []
    for start in range(0, len(seq), chunk):
        block = seq.frames[start : start + chunk]
        for _ in range(level):
            block = pyramid_reduce(block)
        parts.append(block.astype(np.float32))
    return FrameSequence(np.concatenate(parts), seq.fs)


def downscale_mask(mask: np.ndarray, level: int) -> np.ndarray:
    """Carry a full-resolution mask to a pyramid level (majority of the footprint)."""
    m = mask.astype(float)[..., None]
    for _ in range(level):
        m = pyramid_reduce(m)
    return m[..., 0] >= 0.5
