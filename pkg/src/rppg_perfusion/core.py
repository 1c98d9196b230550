"""One-dimensional rPPG signal mathematics.

Every kernel here works on numpy arrays with time on the last axis so the
same code path serves a single ROI trace and a block of per-pixel traces.
The small dataclass wrappers (`RgbTrace`, `RppgSignal`, `Spectrum`) are the
public single-signal surface.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import signal as sps

from .errors import (
    DegenerateVariance,
    EmptyBand,
    InvalidConfig,
    LengthMismatch,
    NonPositiveMean,
    NyquistViolation,
    NyquistWarning,
    OutOfBand,
    TooShort,
    ZeroMeanChannel,
    ZeroVariance,
)

# Noise power is floored at this fraction of the signal power (and vice
# versa), which bounds the SNR to +/-120 dB.
SNR_FLOOR = 1e-12
SNR_CLAMP_DB = -10.0 * math.log10(SNR_FLOOR)

_EPS_MEAN = 1e-12
_EPS_STD = 1e-12
# slack for comparing bin frequencies against the mask tolerance
_FREQ_SLACK = 1e-9
SUBHARMONIC_RATIO = 0.1


@dataclass(frozen=True)
class AnalysisConfig:
    """Sliding-window and spectral analysis parameters (seconds and Hz)."""

    t_win: float = 10.0
    t_step: float = 1.0
    f1: float = 0.6
    f2: float = 4.0
    hr_tolerance: float = 0.05
    pi_cutoff: float = 20.0
    filter_order: int = 5
    min_delta_f: float = 1.0 / 60.0
    subharmonic_ratio: float = SUBHARMONIC_RATIO  # 0 keeps the plain harmonic-sum winner

    def __post_init__(self):
        if not (self.t_win > 0 and self.t_step > 0):
            raise InvalidConfig("t_win and t_step must be positive")
        if self.t_step > self.t_win:
            raise InvalidConfig("t_step must not exceed t_win")
        if not (0 < self.f1 < self.f2):
            raise InvalidConfig(f"need 0 < f1 < f2, got f1={self.f1}, f2={self.f2}")
        if self.hr_tolerance <= 0:
            raise InvalidConfig("hr_tolerance must be positive")
        if self.pi_cutoff <= 0:
            raise InvalidConfig("pi_cutoff must be positive")
        if int(self.filter_order) != self.filter_order or self.filter_order < 1:
            raise InvalidConfig("filter_order must be a positive integer")
        if self.min_delta_f <= 0:
            raise InvalidConfig("min_delta_f must be positive")
        if not 0 <= self.subharmonic_ratio < 1:
            raise InvalidConfig("subharmonic_ratio must lie in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "AnalysisConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def window_samples(self, fs: float) -> tuple[int, int]:
        """Window and step lengths in samples at sampling rate `fs`."""
        return int(round(self.t_win * fs)), max(1, int(round(self.t_step * fs)))


@dataclass(frozen=True)
class RgbTrace:
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    fs: float

    def __post_init__(self):
        for name in ("r", "g", "b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.r.shape == self.g.shape == self.b.shape) or self.r.ndim != 1:
            raise LengthMismatch("r, g, b must be 1-D sequences of equal length")
        if self.fs <= 0:
            raise InvalidConfig("sampling rate must be positive")

    def __len__(self):
        return self.r.shape[0]

    def stacked(self) -> np.ndarray:
        return np.stack([self.r, self.g, self.b])

    @classmethod
    def from_array(cls, rgb: np.ndarray, fs: float) -> "RgbTrace":
        """Build from a (T, 3) or (3, T) array."""
        rgb = np.asarray(rgb, dtype=float)
        if rgb.ndim == 2 and rgb.shape[1] == 3 and rgb.shape[0] != 3:
            rgb = rgb.T
        return cls(rgb[0], rgb[1], rgb[2], fs)

    def slice(self, start: int, stop: int) -> "RgbTrace":
        return RgbTrace(self.r[start:stop], self.g[start:stop], self.b[start:stop], self.fs)


@dataclass(frozen=True)
class RppgSignal:
    samples: np.ndarray
    fs: float
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class Spectrum:
    """One-sided magnitude spectrum; `magnitudes` has n_fft // 2 + 1 bins."""

    magnitudes: np.ndarray
    delta_f: float
    n_fft: int
    fs: float

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.magnitudes.shape[-1]) * self.delta_f

    def bin_of(self, f: float) -> int:
        return int(round(f / self.delta_f))


@dataclass(frozen=True)
class SnrBreakdown:
    snr_db: float
    signal_power: float
    noise_power: float
    mask: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class WindowMetrics:
    t_start: float
    f_hr: float
    bpm: float
    snr_db: float
    magnitude: float
    pi: float | None
    rho_ref: float | None

    @classmethod
    def build(cls, t_start, f_hr, snr_db, magnitude, pi=None, rho_ref=None):
        f_hr = float(f_hr)
        return cls(
            t_start=float(t_start),
            f_hr=f_hr,
            bpm=60.0 * f_hr,
            snr_db=float(snr_db),
            magnitude=float(magnitude),
            pi=None if pi is None else float(pi),
            rho_ref=None if rho_ref is None else float(rho_ref),
        )


# ---------------------------------------------------------------------------
# array kernels (time on the last axis)


def normalize_array(rgb: np.ndarray) -> np.ndarray:
    """Divide every channel by its temporal mean."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.shape[-1] < 2:
        raise TooShort("trace needs at least 2 samples")
    mean = rgb.mean(axis=-1, keepdims=True)
    if np.any(np.abs(mean) < _EPS_MEAN):
        raise ZeroMeanChannel("channel with zero temporal mean cannot be normalized")
    return rgb / mean


def pos_array(rgb_norm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Plane-orthogonal-to-skin projection of normalized traces.

    `rgb_norm` has shape (3, ..., T). Returns the mean-free pulse signal with
    shape (..., T) and a boolean array marking traces whose second projection
    had no variance (those fall back to the first projection).
    """
    r, g, b = rgb_norm[0], rgb_norm[1], rgb_norm[2]
    s1 = g - b
    s2 = g + b - 2.0 * r
    sd1 = s1.std(axis=-1, keepdims=True)
    sd2 = s2.std(axis=-1, keepdims=True)
    degenerate = sd2 < _EPS_STD
    alpha = np.divide(sd1, sd2, out=np.zeros_like(sd1), where=~degenerate)
    h = s1 + alpha * s2
    h = h - h.mean(axis=-1, keepdims=True)
    return h, degenerate[..., 0]


def band_edges(fs: float, cfg: AnalysisConfig) -> tuple[float, float]:
    nyquist = fs / 2.0
    f1, f2 = cfg.f1, cfg.f2
    if f2 >= nyquist:
        clamped = 0.8 * nyquist
        warnings.warn(
            f"upper band edge {f2} Hz is not below Nyquist ({nyquist} Hz); "
            f"clamped to {clamped} Hz",
            NyquistWarning,
            stacklevel=3,
        )
        f2 = clamped
    if f1 >= f2:
        raise NyquistViolation(f"band [{f1}, {f2}] Hz is empty at fs={fs}")
    return f1, f2


def _bandpass_sos(fs: float, cfg: AnalysisConfig) -> np.ndarray:
    f1, f2 = band_edges(fs, cfg)
    return sps.butter(cfg.filter_order, [f1, f2], btype="bandpass", fs=fs, output="sos")


def bandpass_array(x: np.ndarray, fs: float, cfg: AnalysisConfig) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis, mean removed."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] <= 3 * cfg.filter_order:
        raise TooShort(
            f"{x.shape[-1]} samples is too short for an order-{cfg.filter_order} filter"
        )
    sos = _bandpass_sos(fs, cfg)
    padlen = min(x.shape[-1] - 1, 3 * (2 * len(sos) + 1))
    y = sps.sosfiltfilt(sos, x, axis=-1, padlen=padlen)
    return y - y.mean(axis=-1, keepdims=True)


def fft_length(n_samples: int, fs: float, min_delta_f: float) -> int:
    """Smallest power of two that holds the signal and resolves `min_delta_f`."""
    n = 1
    while fs / n > min_delta_f or n < n_samples:
        n *= 2
    return n


def magnitudes_array(x: np.ndarray, n_fft: int, window: str | None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window is not None:
        x = x * sps.get_window(window, x.shape[-1])
    return np.abs(np.fft.rfft(x, n=n_fft, axis=-1))


def band_bins(n_bins: int, delta_f: float, f1: float, f2: float) -> np.ndarray:
    freqs = np.arange(n_bins) * delta_f
    return np.flatnonzero((freqs >= f1 - _FREQ_SLACK) & (freqs <= f2 + _FREQ_SLACK))


def harmonic_hr_array(
    mags: np.ndarray, delta_f: float, f1: float, f2: float, subharmonic_ratio: float = SUBHARMONIC_RATIO
) -> np.ndarray:
    """Heart frequency maximizing M(f) + M(2f) over in-band bins.

    The second-harmonic term is zero above Nyquist; `argmax` returns the first
    maximum, so ties go to the lower frequency. A winner whose own magnitude
    is below `subharmonic_ratio` of its harmonic's is a sub-harmonic alias of a
    near-sinusoidal pulse (f/2 and f share the peak at f), so the harmonic is
    taken instead while it stays in band.
    """
    n_bins = mags.shape[-1]
    band = band_bins(n_bins, delta_f, f1, f2)
    if band.size == 0:
        raise EmptyBand(f"no spectral bin in [{f1}, {f2}] Hz")
    harmonic = 2 * band
    valid = harmonic < n_bins
    second = np.zeros(mags.shape[:-1] + band.shape)
    second[..., valid] = mags[..., harmonic[valid]]
    objective = mags[..., band] + second
    k = band[np.argmax(objective, axis=-1)]
    top = band[-1]
    flat = mags.reshape(-1, n_bins)
    kf = np.atleast_1d(k).reshape(-1).copy()
    rows = np.arange(kf.size)
    while True:
        up = 2 * kf
        ok = up <= top
        alias = np.zeros_like(ok)
        alias[ok] = flat[rows[ok], kf[ok]] < subharmonic_ratio * flat[rows[ok], up[ok]]
        if not alias.any():
            break
        kf[alias] = up[alias]
    return kf.reshape(np.shape(k)) * delta_f


def hr_mask(freqs: np.ndarray, f_hr, tolerance: float, nyquist: float) -> np.ndarray:
    """Binary signal mask around f_hr and its second harmonic.

    `f_hr` may be a scalar or an array; the result broadcasts to
    f_hr.shape + freqs.shape.
    """
    f_hr = np.asarray(f_hr, dtype=float)[..., None]
    near_fund = np.abs(f_hr - freqs) <= tolerance + _FREQ_SLACK
    near_harm = (np.abs(2.0 * f_hr - freqs) <= tolerance + _FREQ_SLACK) & (
        2.0 * f_hr <= nyquist
    )
    return near_fund | near_harm


def snr_array(mags, delta_f, f_hr, f1, f2, tolerance, nyquist):
    """Return (snr_db, signal_power, noise_power) over the analysis band."""
    band = band_bins(mags.shape[-1], delta_f, f1, f2)
    if band.size == 0:
        raise EmptyBand(f"no spectral bin in [{f1}, {f2}] Hz")
    m = mags[..., band]
    mask = hr_mask(band * delta_f, f_hr, tolerance, nyquist)
    power = m**2
    sig = np.sum(np.where(mask, power, 0.0), axis=-1)
    noise = np.sum(np.where(mask, 0.0, power), axis=-1)
    return snr_from_powers(sig, noise), sig, noise


def snr_from_powers(sig, noise):
    """10*log10(sig/noise) with each power floored at SNR_FLOOR of the other.

    Returns NaN where both powers are zero.
    """
    sig = np.asarray(sig, dtype=float)
    noise = np.asarray(noise, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(sig, SNR_FLOOR * noise) / np.maximum(noise, SNR_FLOOR * sig)
        out = 10.0 * np.log10(ratio)
    out = np.where((sig == 0) & (noise == 0), np.nan, out)
    return out if out.ndim else float(out)


def pearson_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Pearson correlation; NaN where either side has no variance."""
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    na = np.sqrt(np.sum(a * a, axis=-1))
    nb = np.sqrt(np.sum(b * b, axis=-1))
    denom = na * nb
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.sum(a * b, axis=-1) / denom
    rho = np.where(denom > 0, np.clip(rho, -1.0, 1.0), np.nan)
    return rho


def pi_cutoff(fs: float, cfg: AnalysisConfig) -> float:
    """Low-pass cutoff for the perfusion index, capped at 0.8 * Nyquist."""
    return min(cfg.pi_cutoff, 0.8 * fs / 2.0)


# ---------------------------------------------------------------------------
# public single-signal operations


def normalize_trace(raw: RgbTrace) -> RgbTrace:
    rgb = normalize_array(raw.stacked())
    return RgbTrace(rgb[0], rgb[1], rgb[2], raw.fs)


def pos_project(trace: RgbTrace) -> RppgSignal:
    """Unfiltered pulse signal h = S1 + (sd(S1)/sd(S2)) * S2, mean removed."""
    if len(trace) < 2:
        raise TooShort("trace needs at least 2 samples")
    h, degenerate = pos_array(trace.stacked())
    degenerate = bool(degenerate)
    if degenerate:
        warnings.warn("S2 has zero variance; using h = S1", DegenerateVariance, stacklevel=2)
    return RppgSignal(h, trace.fs, degenerate)


def bandpass_filter(sig: RppgSignal, cfg: AnalysisConfig) -> RppgSignal:
    return RppgSignal(bandpass_array(sig.samples, sig.fs, cfg), sig.fs, sig.degenerate)


def spectrum(
    sig: RppgSignal,
    cfg: AnalysisConfig,
    *,
    padded: bool = True,
    window: str | None = "hann",
) -> Spectrum:
    """Magnitude spectrum of `sig`.

    With ``padded=True`` the signal is zero-padded to the smallest power of
    two whose bin spacing is at most ``cfg.min_delta_f``. With
    ``padded=False`` the FFT length equals the number of samples.
    """
    n = len(sig)
    if n < 2:
        raise TooShort("spectrum needs at least 2 samples")
    n_fft = fft_length(n, sig.fs, cfg.min_delta_f) if padded else n
    mags = magnitudes_array(sig.samples, n_fft, window)
    return Spectrum(mags, sig.fs / n_fft, n_fft, sig.fs)


def native_spectrum(sig: RppgSignal, cfg: AnalysisConfig) -> Spectrum:
    """Untapered spectrum at the window's own resolution, used for SNR."""
    return spectrum(sig, cfg, padded=False, window=None)


def estimate_hr(spec: Spectrum, cfg: AnalysisConfig) -> float:
    f1, f2 = band_edges(spec.fs, cfg)
    return float(harmonic_hr_array(spec.magnitudes, spec.delta_f, f1, f2, cfg.subharmonic_ratio))


def magnitude_at(spec: Spectrum, f: float) -> float:
    k = spec.bin_of(f)
    if not 0 <= k < spec.magnitudes.shape[-1]:
        raise OutOfBand(f"{f} Hz is outside the spectrum")
    return float(spec.magnitudes[k])


def snr_and_magnitude(
    spec: Spectrum, f_hr: float, cfg: AnalysisConfig
) -> tuple[SnrBreakdown, float]:
    f1, f2 = band_edges(spec.fs, cfg)
    if not (f1 - _FREQ_SLACK <= f_hr <= f2 + _FREQ_SLACK):
        raise OutOfBand(f"f_hr={f_hr} Hz outside [{f1}, {f2}] Hz")
    nyquist = spec.fs / 2.0
    snr, sig, noise = snr_array(
        spec.magnitudes, spec.delta_f, f_hr, f1, f2, cfg.hr_tolerance, nyquist
    )
    mask = hr_mask(spec.freqs, f_hr, cfg.hr_tolerance, nyquist)
    band = np.zeros(spec.magnitudes.shape[-1], dtype=bool)
    band[band_bins(band.size, spec.delta_f, f1, f2)] = True
    breakdown = SnrBreakdown(
        snr_db=float(snr),
        signal_power=float(sig),
        noise_power=float(noise),
        mask=(mask & band).astype(np.uint8),
    )
    return breakdown, magnitude_at(spec, f_hr)


def perfusion_index(green, fs: float, cfg: AnalysisConfig) -> float:
    """max/mean of the low-passed green trace."""
    g = np.asarray(green, dtype=float)
    if g.shape[-1] < 2:
        raise TooShort("green trace needs at least 2 samples")
    if np.all(g == g[0]):
        if g[0] <= 0:
            raise NonPositiveMean("green trace mean must be positive")
        return 1.0
    sos = sps.butter(cfg.filter_order, pi_cutoff(fs, cfg), btype="lowpass", fs=fs, output="sos")
    padlen = min(g.shape[-1] - 1, 3 * (2 * len(sos) + 1))
    g_lp = sps.sosfiltfilt(sos, g, padlen=padlen)
    mean = g_lp.mean()
    if mean <= 0:
        raise NonPositiveMean("low-passed green trace mean must be positive")
    return float(g_lp.max() / mean)


def pearson_corr(a, b) -> float:
    a = np.asarray(a.samples if isinstance(a, RppgSignal) else a, dtype=float)
    b = np.asarray(b.samples if isinstance(b, RppgSignal) else b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"length {a.shape} != {b.shape}")
    if a.shape[-1] < 2:
        raise TooShort("correlation needs at least 2 samples")
    rho = float(pearson_array(a, b))
    if math.isnan(rho):
        raise ZeroVariance("correlation undefined for a constant signal")
    return rho


def reference_from_hr(f_hr: float, fs: float, duration: float) -> RppgSignal:
    """Unit sine at f_hr, phase 0, standing in for a reference region."""
    if not 0 < f_hr < fs / 2.0:
        raise NyquistViolation(f"reference frequency {f_hr} Hz not in (0, {fs / 2}) Hz")
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    return RppgSignal(np.sin(2.0 * np.pi * f_hr * t), fs)
