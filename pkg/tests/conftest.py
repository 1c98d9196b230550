from pathlib import Path

import numpy as np
import pytest

from rppg_perfusion.core import AnalysisConfig
from rppg_perfusion.synth import SynthSpec, generate_synthetic_video
from rppg_perfusion.video import load_landmarks

DATA = Path(__file__).parent / "data"


@pytest.fixture
def cfg():
    return AnalysisConfig()


@pytest.fixture(scope="session")
def face_landmarks():
    """Frontal 68-point face inside a 200 x 200 frame."""
    return load_landmarks(DATA / "frontal_face_200.csv")


@pytest.fixture(scope="session")
def pulsatile_video():
    """30 s, 60 x 60, 72 BPM, uniform pulse with mild noise."""
    spec = SynthSpec(width=60, height=60, duration=30, noise_sigma=0.005, seed=11)
    return generate_synthetic_video(spec)


def box_mask(shape, y0, y1, x0, x1):
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m
