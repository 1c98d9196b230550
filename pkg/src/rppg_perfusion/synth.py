"""Synthetic pulsatile video generator.

Each pixel carries a sinusoidal pulse along a fixed RGB direction on top of
its base colour. Dead zones carry no pulse, a reperfusion time switches the
pulse on part-way through, and a phase gradient delays the pulse across the
image. Frames are quantized to 8 bit with per-pixel dither so sub-LSB
pulsations survive spatial averaging.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidSpec
from .export import write_map
from .video import FrameSequence, save_frame_directory

# Blood-volume pulse signature of skin in normalized RGB, scaled so that the
# green weight is 1 (pulse_amplitude is then a fraction of base green).
DEFAULT_PULSE_DIRECTION = (0.33 / 0.77, 1.0, 0.53 / 0.77)


@dataclass
class SynthSpec:
    width: int = 100
    height: int = 100
    fs: float = 30.0
    duration: float = 30.0
    base_color: tuple[int, int, int] = (200, 140, 120)
    pulse_hr: float = 72.0
    pulse_amplitude: float = 0.02
    pulse_direction: tuple[float, float, float] = DEFAULT_PULSE_DIRECTION
    noise_sigma: float = 0.0
    dead_zones: list[tuple[int, int, int, int]] = field(default_factory=list)
    reperfusion_time: float | None = None
    phase_gradient: float | None = None
    seed: int = 0
    # extensions beyond the plain pulsatile model
    texture: float = 0.0
    hyperemia_gain: float = 0.0
    hyperemia_peak: float = 10.0
    dither: bool = True

    def __post_init__(self):
        self.base_color = tuple(int(c) for c in self.base_color)
        self.pulse_direction = tuple(float(c) for c in self.pulse_direction)
        self.dead_zones = [tuple(int(v) for v in z) for z in self.dead_zones]
        self.validate()

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise InvalidSpec("frame dimensions must be positive")
        if self.fs <= 0 or self.duration <= 0:
            raise InvalidSpec("fs and duration must be positive")
        if not 36 <= self.pulse_hr <= 240:
            raise InvalidSpec(f"pulse_hr {self.pulse_hr} outside [36, 240] BPM")
        if not 0 <= self.pulse_amplitude < 0.5:
            raise InvalidSpec("pulse_amplitude must lie in [0, 0.5)")
        if self.noise_sigma < 0 or self.texture < 0:
            raise InvalidSpec("noise_sigma and texture must be non-negative")
        if self.fs <= 2 * self.pulse_hr / 60.0:
            raise InvalidSpec("frame rate does not resolve the pulse frequency")
        if len(self.base_color) != 3 or not all(0 <= c <= 255 for c in self.base_color):
            raise InvalidSpec("base_color must be an RGB8 triple")
        if len(self.pulse_direction) != 3:
            raise InvalidSpec("pulse_direction must be a 3-vector")
        for zone in self.dead_zones:
            if len(zone) != 4:
                raise InvalidSpec("dead zones are (x0, y0, x1, y1) rectangles")
        if self.hyperemia_gain < 0 or self.hyperemia_peak <= 0:
            raise InvalidSpec("hyperemia_gain must be >= 0 and hyperemia_peak > 0")

    @property
    def f_hr(self) -> float:
        return self.pulse_hr / 60.0

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fs))

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dead_zones"] = [list(z) for z in self.dead_zones]
        return d


@dataclass
class SynthTruth:
    hr_bpm: float
    f_hr: float
    fs: float
    waveform: np.ndarray  # unit sine at the pulse frequency, zero phase
    envelope: np.ndarray  # relative pulse amplitude over time
    amplitude_map: np.ndarray  # per-pixel pulse amplitude (fraction of base)
    phase_map: np.ndarray


def amplitude_map(spec: SynthSpec) -> np.ndarray:
    amp = np.full((spec.height, spec.width), spec.pulse_amplitude)
    for x0, y0, x1, y1 in spec.dead_zones:
        amp[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = 0.0
    return amp


def envelope(spec: SynthSpec, t: np.ndarray) -> np.ndarray:
    """Pulse-amplitude envelope: 1, or a step at the reperfusion time with an
    optional transient overshoot peaking `hyperemia_peak` seconds later."""
    if spec.reperfusion_time is None:
        return np.ones_like(t)
    dt = t - spec.reperfusion_time
    env = (dt >= 0).astype(float)
    if spec.hyperemia_gain > 0:
        u = np.clip(dt, 0, None) / spec.hyperemia_peak
        env = env * (1.0 + spec.hyperemia_gain * u * np.exp(1.0 - u))
    return env


def _texture(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.texture == 0:
        return np.ones((spec.height, spec.width))
    noise = ndimage.gaussian_filter(rng.standard_normal((spec.height, spec.width)), 2.0, mode="wrap")
    noise /= noise.std()
    return np.clip(1.0 + spec.texture * noise, 0.2, None)


def generate_synthetic_video(spec: SynthSpec, workers: int = 1) -> tuple[FrameSequence, SynthTruth]:
    spec.validate()
    n = spec.n_frames
    t = np.arange(n) / spec.fs
    seeds = np.random.SeedSequence(spec.seed).spawn(n + 1)
    base = np.asarray(spec.base_color, dtype=float)
    direction = np.asarray(spec.pulse_direction, dtype=float)
    tex = _texture(spec, np.random.default_rng(seeds[0]))
    base_img = tex[..., None] * base  # (H, W, 3)
    amp = amplitude_map(spec)
    xs = np.arange(spec.width, dtype=float)
    phase = np.zeros((spec.height, spec.width))
    if spec.phase_gradient:
        phase = np.broadcast_to(spec.phase_gradient * xs, (spec.height, spec.width)).copy()
    env = envelope(spec, t)
    omega = 2.0 * np.pi * spec.f_hr
    weighted = amp[..., None] * direction  # (H, W, 3)
    noise_scale = spec.noise_sigma * base

    def render(i: int) -> np.ndarray:
        rng = np.random.default_rng(seeds[i + 1])
        pulse = env[i] * np.sin(omega * t[i] + phase)
        frame = base_img * (1.0 + weighted * pulse[..., None])
        if spec.noise_sigma > 0:
            frame = frame + noise_scale * rng.standard_normal(frame.shape)
        # rectangular dither in [-0.5, 0.5) keeps integer inputs exact and
        # makes the quantized value unbiased on average
        dither = rng.random(frame.shape) - 0.5 if spec.dither else 0.0
        return np.clip(np.floor(frame + dither + 0.5), 0, 255).astype(np.uint8)

    frames = np.empty((n, spec.height, spec.width, 3), dtype=np.uint8)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            for i, frame in enumerate(pool.map(render, range(n))):
                frames[i] = frame
    else:
        for i in range(n):
            frames[i] = render(i)

    truth = SynthTruth(
        hr_bpm=spec.pulse_hr,
        f_hr=spec.f_hr,
        fs=spec.fs,
        waveform=np.sin(omega * t),
        envelope=env,
        amplitude_map=amp,
        phase_map=phase,
    )
    return FrameSequence(frames, spec.fs), truth


def write_synthetic(spec: SynthSpec, out_dir, workers: int = 1) -> Path:
    """Write frames (frame-directory format), truth.json, waveform.csv and
    the amplitude map."""
    out_dir = Path(out_dir)
    seq, truth = generate_synthetic_video(spec, workers=workers)
    save_frame_directory(seq, out_dir)
    write_map(out_dir / "amplitude_map.map", truth.amplitude_map, "amplitude")
    with open(out_dir / "waveform.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "pulse", "envelope"])
        for i, (w, e) in enumerate(zip(truth.waveform, truth.envelope)):
            writer.writerow([f"{i / spec.fs:.6f}", f"{w:.9f}", f"{e:.9f}"])
    meta = {
        "hr_bpm": truth.hr_bpm,
        "f_hr": truth.f_hr,
        "fps": truth.fs,
        "amplitude_map": "amplitude_map.map",
        "waveform": "waveform.csv",
        "spec": spec.to_dict(),
    }
    (out_dir / "truth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out_dir
