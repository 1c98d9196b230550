"""Global, region-based and local (per-pixel) perfusion analysis.

All three scales share one chain: channel means -> temporal normalization ->
POS projection -> zero-phase band-pass over the whole recording, then
sliding windows for heart rate, SNR, magnitude, perfusion index and the
correlation against a reference signal.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path as MplPath

from . import core
from .core import AnalysisConfig, WindowMetrics
from .errors import (
    DegenerateLandmarks,
    DimensionMismatch,
    MissingReference,
    TooShortRecording,
)
from .video import (
    FrameSequence,
    choose_pyramid_level,
    mean_rgb_trace,
    motion_compensate,
    pyramid_downscale,
    skin_segment,
)

log = logging.getLogger(__name__)

REGION_NAMES = ("right-forehead", "left-forehead", "right-cheek", "left-cheek", "nose")

# 68-point (iBUG) landmark indices outlining each region. "right" is the
# subject's right, i.e. image-left on a frontal face. Forehead outlines are
# completed by points extrapolated above the brows (see regions_from_landmarks).
RIGHT_BROW = (17, 18, 19, 20, 21)
LEFT_BROW = (22, 23, 24, 25, 26)
NOSE_BRIDGE_TOP = 27
CHIN = 8
REGION_INDICES = {
    "right-cheek": (1, 41, 40, 39, 31, 48, 4, 3, 2),
    "left-cheek": (15, 14, 13, 12, 54, 35, 42, 47, 46),
    "nose": (27, 42, 35, 34, 33, 32, 31, 39),
}
FOREHEAD_EXTENT = 0.6  # forehead height as a fraction of the brow-to-chin distance
MIN_REGION_AREA = 25.0

# index permutation mapping a 68-point set onto its horizontal mirror image
MIRROR_68 = (
    list(range(16, -1, -1))
    + list(range(26, 16, -1))
    + [27, 28, 29, 30]
    + [35, 34, 33, 32, 31]
    + [45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40]
    + [54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55]
    + [64, 63, 62, 61, 60, 67, 66, 65]
)


@dataclass
class MetricsTimeline:
    entries: list[WindowMetrics]
    config: AnalysisConfig = field(default_factory=AnalysisConfig)
    name: str = "roi"

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if getattr(e, name) is None else getattr(e, name) for e in self.entries],
            dtype=float,
        )


@dataclass(frozen=True)
class RegionSpec:
    name: str
    polygon: np.ndarray  # (k, 2) vertices as (x, y)

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)


@dataclass
class RegionAnalysis:
    timelines: dict[str, MetricsTimeline]
    reference: str


@dataclass
class PerfusionMapSet:
    t_start: float
    f_hr: float  # global heart frequency used for the SNR mask and magnitude
    maps: dict[str, np.ndarray]  # magnitude, snr_db, rho_ref, bpm; NaN = absent

    @property
    def height(self) -> int:
        return next(iter(self.maps.values())).shape[0]

    @property
    def width(self) -> int:
        return next(iter(self.maps.values())).shape[1]

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.maps["rho_ref"])


@dataclass
class LocalAnalysis:
    level: int
    windows: list[PerfusionMapSet]
    reference: np.ndarray  # reference rPPG signal over the whole recording


MAP_NAMES = ("magnitude", "snr_db", "rho_ref", "bpm")


# ---------------------------------------------------------------------------
# shared chain


def window_starts(n_samples: int, fs: float, cfg: AnalysisConfig) -> list[int]:
    """Start samples of full windows aligned to the recording start."""
    win, step = cfg.window_samples(fs)
    if n_samples < win or win < 2:
        raise TooShortRecording(
            f"{n_samples / fs:.2f} s recording is shorter than the {cfg.t_win} s window"
        )
    return list(range(0, n_samples - win + 1, step))


def rppg_from_rgb(rgb: np.ndarray, fs: float, cfg: AnalysisConfig) -> np.ndarray:
    """(3, ..., T) channel means -> band-passed pulse signal (..., T)."""
    h, _ = core.pos_array(core.normalize_array(rgb))
    return core.bandpass_array(h, fs, cfg)


def _window_block(rppg, fs, cfg, starts, f_use=None):
    """Per-window spectral features for a block of signals (P, T).

    Returns arrays of shape (W, P): own heart frequency, SNR and magnitude.
    SNR and magnitude are taken at `f_use[w]` when given, else at the
    signal's own heart frequency.
    """
    win, _ = cfg.window_samples(fs)
    f1, f2 = core.band_edges(fs, cfg)
    n_fft = core.fft_length(win, fs, cfg.min_delta_f)
    df = fs / n_fft
    nyquist = fs / 2.0
    n_sig = rppg.shape[0]
    own = np.empty((len(starts), n_sig))
    snr = np.empty((len(starts), n_sig))
    mag = np.empty((len(starts), n_sig))
    rows = np.arange(n_sig)
    for w, s in enumerate(starts):
        seg = rppg[:, s : s + win]
        padded = core.magnitudes_array(seg, n_fft, "hann")
        own[w] = core.harmonic_hr_array(padded, df, f1, f2, cfg.subharmonic_ratio)
        f_hr = own[w] if f_use is None else np.full(n_sig, f_use[w])
        mag[w] = padded[rows, np.rint(f_hr / df).astype(int)]
        native = core.magnitudes_array(seg, win, None)
        snr[w] = core.snr_array(native, fs / win, f_hr, f1, f2, cfg.hr_tolerance, nyquist)[0]
    return own, snr, mag


def _opt(value) -> float | None:
    return None if value is None or np.isnan(value) else float(value)


def analyze_trace(
    rgb: np.ndarray,
    fs: float,
    cfg: AnalysisConfig,
    reference: np.ndarray | None = None,
    name: str = "roi",
) -> tuple[MetricsTimeline, np.ndarray]:
    """Sliding-window metrics of one (3, T) channel-mean trace.

    `reference` is a pulse signal of the same length; without it rho_ref is
    absent. Returns the timeline and the trace's band-passed rPPG signal.
    """
    rgb = np.asarray(rgb, dtype=float)
    starts = window_starts(rgb.shape[-1], fs, cfg)
    win, _ = cfg.window_samples(fs)
    rppg = rppg_from_rgb(rgb, fs, cfg)
    own, snr, mag = _window_block(rppg[None], fs, cfg, starts)
    entries = []
    for w, s in enumerate(starts):
        seg = rppg[s : s + win]
        pi = core.perfusion_index(rgb[1, s : s + win], fs, cfg)
        rho = None
        if reference is not None:
            rho = _opt(core.pearson_array(seg, reference[s : s + win]))
        entries.append(
            WindowMetrics.build(s / fs, own[w, 0], snr[w, 0], mag[w, 0], pi=pi, rho_ref=rho)
        )
    return MetricsTimeline(entries, cfg, name), rppg


def _check_reference(ref_mask, external_hr):
    if ref_mask is None and external_hr is None:
        raise MissingReference("need a reference region or an external heart rate")


def _preprocess(seq, roi, register):
    if roi.shape != (seq.height, seq.width):
        raise DimensionMismatch(f"ROI {roi.shape} vs frames {(seq.height, seq.width)}")
    if register:
        seq, _ = motion_compensate(seq, roi)
    return seq


def _roi_masks(seq: FrameSequence, roi: np.ndarray, skin_seg: bool) -> np.ndarray:
    if not skin_seg:
        return roi
    masks = np.empty((len(seq),) + roi.shape, dtype=bool)
    for i, frame in enumerate(seq.frames):
        m = roi & skin_segment(frame)
        if not m.any():
            log.warning("frame %d: no skin pixels inside the ROI, using the full ROI", i)
            m = roi
        masks[i] = m
    return masks


def analyze_global(
    seq: FrameSequence,
    roi: np.ndarray,
    ref: np.ndarray | None = None,
    cfg: AnalysisConfig | None = None,
    external_hr: float | None = None,
    *,
    register: bool = False,
    skin_seg: bool = False,
) -> tuple[MetricsTimeline, MetricsTimeline | None]:
    """Timelines for the ROI and (when a reference region is given) the reference.

    `external_hr` is in Hz and replaces the reference region by a sine.
    """
    cfg = cfg or AnalysisConfig()
    _check_reference(ref, external_hr)
    window_starts(len(seq), seq.fs, cfg)
    seq = _preprocess(seq, roi, register)
    roi_rgb = mean_rgb_trace(seq.frames, _roi_masks(seq, roi, skin_seg))
    ref_timeline = None
    if ref is not None:
        if ref.shape != roi.shape:
            raise DimensionMismatch(f"reference mask {ref.shape} vs ROI {roi.shape}")
        ref_rgb = mean_rgb_trace(seq.frames, _roi_masks(seq, ref, skin_seg))
        ref_rppg = rppg_from_rgb(ref_rgb, seq.fs, cfg)
        ref_timeline, _ = analyze_trace(ref_rgb, seq.fs, cfg, ref_rppg, name="reference")
    else:
        ref_rppg = core.reference_from_hr(external_hr, seq.fs, len(seq) / seq.fs).samples
    roi_timeline, _ = analyze_trace(roi_rgb, seq.fs, cfg, ref_rppg, name="roi")
    return roi_timeline, ref_timeline


# ---------------------------------------------------------------------------
# regions


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def mirror_landmarks(points: np.ndarray, width: int) -> np.ndarray:
    """Landmarks of the horizontally mirrored image, re-indexed so that each
    index keeps its anatomical meaning."""
    mirrored = points.copy()
    mirrored[:, 0] = (width - 1) - points[:, 0]
    return mirrored[list(MIRROR_68)]


def regions_from_landmarks(lm: np.ndarray, dims: tuple[int, int]) -> list[RegionSpec]:
    """Five facial regions from 68 landmarks; `dims` is (height, width)."""
    lm = np.asarray(lm, dtype=float)
    height, width = dims
    if lm.shape != (68, 2):
        raise DegenerateLandmarks(f"need 68 (x, y) landmarks, got {lm.shape}")
    if np.any(lm < 0) or np.any(lm[:, 0] > width - 1) or np.any(lm[:, 1] > height - 1):
        raise DegenerateLandmarks("landmarks outside the frame")
    brow_y = lm[list(RIGHT_BROW + LEFT_BROW), 1].mean()
    lift = FOREHEAD_EXTENT * (lm[CHIN, 1] - brow_y)
    mid_x = lm[NOSE_BRIDGE_TOP, 0]

    def up(p):
        return np.array([p[0], max(p[1] - lift, 0.0)])

    rb = lm[list(RIGHT_BROW)]
    lb = lm[list(LEFT_BROW)]
    right_fh = np.vstack(
        [rb, [mid_x, rb[-1, 1]], up([mid_x, rb[-1, 1]]), up(rb[0])]
    )
    left_fh = np.vstack(
        [[mid_x, lb[0, 1]], lb, up(lb[-1]), up([mid_x, lb[0, 1]])]
    )
    polys = {
        "right-forehead": right_fh,
        "left-forehead": left_fh,
    }
    for name, idx in REGION_INDICES.items():
        polys[name] = lm[list(idx)]
    regions = []
    for name in REGION_NAMES:
        spec = RegionSpec(name, polys[name])
        if spec.area < MIN_REGION_AREA:
            raise DegenerateLandmarks(f"region {name} has area {spec.area:.1f} px^2")
        regions.append(spec)
    return regions


def rasterize_regions(regions: list[RegionSpec], dims: tuple[int, int]) -> dict[str, np.ndarray]:
    """Pixel masks (pixel centres at integer coordinates); a pixel claimed by
    an earlier region is never given to a later one."""
    height, width = dims
    yy, xx = np.mgrid[0:height, 0:width]
    pts = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
    taken = np.zeros(height * width, dtype=bool)
    masks = {}
    for region in regions:
        inside = MplPath(region.polygon).contains_points(pts) & ~taken
        taken |= inside
        masks[region.name] = inside.reshape(height, width)
    return masks


def _region_traces(seq: FrameSequence, landmarks: np.ndarray, skin_seg: bool) -> dict[str, np.ndarray]:
    """(3, T) channel means per region.

    Per-frame landmark sets are grouped into runs of identical sets; a static
    set is one run, so both inputs go through the same arithmetic.
    """
    dims = (seq.height, seq.width)
    if landmarks.ndim == 2:
        landmarks = landmarks[None]
    if landmarks.shape[0] == 1:
        runs = [(0, len(seq), landmarks[0])]
    else:
        if landmarks.shape[0] != len(seq):
            raise DimensionMismatch(f"{landmarks.shape[0]} landmark sets for {len(seq)} frames")
        runs = []
        start = 0
        for i in range(1, len(seq) + 1):
            if i == len(seq) or not np.array_equal(landmarks[i], landmarks[start]):
                runs.append((start, i, landmarks[start]))
                start = i
    parts = {name: [] for name in REGION_NAMES}
    for a, b, lm in runs:
        masks = rasterize_regions(regions_from_landmarks(lm, dims), dims)
        sub = FrameSequence(seq.frames[a:b], seq.fs)
        for name in REGION_NAMES:
            parts[name].append(mean_rgb_trace(sub.frames, _roi_masks(sub, masks[name], skin_seg)))
    return {name: np.concatenate(parts[name], axis=1) for name in REGION_NAMES}


def analyze_regions(
    seq: FrameSequence,
    landmarks: np.ndarray,
    cfg: AnalysisConfig | None = None,
    *,
    register: bool = False,
    skin_seg: bool = False,
) -> RegionAnalysis:
    """Per-region timelines; rho_ref is taken against the most reliable region."""
    from .pad import select_reference_region

    cfg = cfg or AnalysisConfig()
    window_starts(len(seq), seq.fs, cfg)
    landmarks = np.asarray(landmarks, dtype=float)
    if register:
        first = landmarks if landmarks.ndim == 2 else landmarks[0]
        face = np.zeros((seq.height, seq.width), dtype=bool)
        for m in rasterize_regions(regions_from_landmarks(first, (seq.height, seq.width)),
                                   (seq.height, seq.width)).values():
            face |= m
        seq, _ = motion_compensate(seq, face)
    traces = _region_traces(seq, landmarks, skin_seg)
    first_pass = {}
    signals = {}
    for name in REGION_NAMES:
        first_pass[name], signals[name] = analyze_trace(traces[name], seq.fs, cfg, None, name=name)
    reference = select_reference_region(first_pass)
    ref_rppg = signals[reference]
    win, _ = cfg.window_samples(seq.fs)
    timelines = {}
    for name in REGION_NAMES:
        entries = []
        for e in first_pass[name].entries:
            s = int(round(e.t_start * seq.fs))
            rho = _opt(core.pearson_array(signals[name][s : s + win], ref_rppg[s : s + win]))
            entries.append(WindowMetrics.build(e.t_start, e.f_hr, e.snr_db, e.magnitude, e.pi, rho))
        timelines[name] = MetricsTimeline(entries, cfg, name)
    return RegionAnalysis(timelines, reference)


# ---------------------------------------------------------------------------
# local maps


def _local_chunk(rgb, fs, cfg, starts, ref_rppg, f_global):
    """Map values for a block of pixels; rgb is (3, P, T)."""
    win, _ = cfg.window_samples(fs)
    mean = rgb.mean(axis=-1, keepdims=True)
    valid = np.all(np.abs(mean[..., 0]) > 1e-12, axis=0)
    safe = np.where(np.abs(mean) > 1e-12, mean, 1.0)
    h, _ = core.pos_array(rgb / safe)
    h[~valid] = 0.0
    rppg = core.bandpass_array(h, fs, cfg)
    own, snr, mag = _window_block(rppg, fs, cfg, starts, f_use=f_global)
    rho = np.empty_like(own)
    for w, s in enumerate(starts):
        rho[w] = core.pearson_array(rppg[:, s : s + win], ref_rppg[None, s : s + win])
    defined = valid[None] & ~np.isnan(rho) & ~np.isnan(snr)
    out = {"magnitude": mag, "snr_db": snr, "rho_ref": rho, "bpm": 60.0 * own}
    return {k: np.where(defined, v, np.nan) for k, v in out.items()}


def analyze_local(
    seq: FrameSequence,
    ref: np.ndarray | None = None,
    external_hr: float | None = None,
    cfg: AnalysisConfig | None = None,
    *,
    target_px: int = 10000,
    workers: int = 1,
    chunk: int = 1024,
    register: bool = False,
) -> LocalAnalysis:
    """Per-pixel maps at the pyramid level closest to `target_px` pixels.

    The reference signal (and the global heart frequency that fixes the SNR
    mask and the magnitude bin) comes from `ref` at full resolution, or from a
    sine at `external_hr` Hz. Pixels are processed in fixed-size chunks so the
    result does not depend on `workers`.
    """
    cfg = cfg or AnalysisConfig()
    _check_reference(ref, external_hr)
    starts = window_starts(len(seq), seq.fs, cfg)
    fs = seq.fs
    if ref is not None:
        if ref.shape != (seq.height, seq.width):
            raise DimensionMismatch(f"reference mask {ref.shape} vs frames {(seq.height, seq.width)}")
        if register:
            seq, _ = motion_compensate(seq, ref)
        ref_rppg = rppg_from_rgb(mean_rgb_trace(seq.frames, ref), fs, cfg)
        f_global = _window_block(ref_rppg[None], fs, cfg, starts)[0][:, 0]
    else:
        ref_rppg = core.reference_from_hr(external_hr, fs, len(seq) / fs).samples
        f_global = np.full(len(starts), float(external_hr))

    level = choose_pyramid_level(seq.height, seq.width, target_px)
    small = pyramid_downscale(seq, target_px)
    h, w = small.height, small.width
    pixels = small.frames.reshape(len(small), h * w, 3)
    bounds = [(a, min(a + chunk, h * w)) for a in range(0, h * w, chunk)]

    def run(bound):
        a, b = bound
        rgb = np.transpose(pixels[:, a:b, :], (2, 1, 0)).astype(float)
        return _local_chunk(rgb, fs, cfg, starts, ref_rppg, f_global)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, bounds))
    else:
        results = [run(b) for b in bounds]

    windows = []
    for wi, s in enumerate(starts):
        maps = {
            name: np.concatenate([r[name][wi] for r in results]).reshape(h, w)
            for name in MAP_NAMES
        }
        windows.append(PerfusionMapSet(s / fs, float(f_global[wi]), maps))
    return LocalAnalysis(level, windows, ref_rppg)


# ---------------------------------------------------------------------------
# post-processing


def minmax_normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    lo, hi = np.nanmin(v), np.nanmax(v)
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def reperfusion_event(timeline: MetricsTimeline) -> tuple[float, np.ndarray]:
    """Window start time of the normalized-PI maximum, and the normalized PI."""
    pi_norm = minmax_normalize(timeline.column("pi"))
    idx = int(np.nanargmax(pi_norm))
    return timeline.entries[idx].t_start, pi_norm
