"""Camera-based perfusion analysis and presentation attack detection."""

__version__ = "0.1.0"

from .core import (
    AnalysisConfig,
    RgbTrace,
    RppgSignal,
    SnrBreakdown,
    Spectrum,
    WindowMetrics,
    bandpass_filter,
    estimate_hr,
    magnitude_at,
    native_spectrum,
    normalize_trace,
    pearson_corr,
    perfusion_index,
    pos_project,
    reference_from_hr,
    snr_and_magnitude,
    spectrum,
)
from .errors import AnalysisError, InputError, RppgError
from .pad import PadSample, extract_feature_table, select_reference_region, svm_train, video_verdict
from .render import render_heatmap
from .scales import (
    MetricsTimeline,
    PerfusionMapSet,
    RegionSpec,
    analyze_global,
    analyze_local,
    analyze_regions,
    regions_from_landmarks,
)
from .svm import SvmModel, svm_predict
from .synth import SynthSpec, generate_synthetic_video
from .video import FrameSequence, load_frame_sequence, register_translation

__all__ = [name for name in dir() if not name.startswith("_")]
