"""Region-based presentation attack detection."""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SNR_CLAMP_DB, AnalysisConfig
from .errors import InputError, InsufficientData, NoRegions, SingleClass
from .scales import REGION_NAMES, MetricsTimeline, analyze_regions
from .svm import Scaler, SvmModel, fit_svm, svm_predict

FEATURES = ("snr_db", "magnitude", "rho_ref")
CSV_COLUMNS = ("subject_id", "region", "window", "snr_db", "magnitude", "rho_ref", "label")


@dataclass(frozen=True)
class PadSample:
    subject_id: str
    region: str
    window_index: int
    snr_db: float
    magnitude: float
    rho_ref: float
    label: int
    video_id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label}")
        if not all(math.isfinite(v) for v in self.features):
            raise InputError(f"non-finite features in {self}")

    @property
    def features(self) -> tuple[float, float, float]:
        return (self.snr_db, self.magnitude, self.rho_ref)


@dataclass
class CvReport:
    fold_accuracy: list[float]
    confusion: np.ndarray  # rows actual (0, 1), columns predicted (0, 1)
    folds: list[np.ndarray] = field(repr=False)  # validation indices per fold

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "fold_accuracy": self.fold_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "pooled_accuracy": self.accuracy,
            "confusion_matrix": self.confusion.tolist(),
        }


def confusion_matrix(actual, predicted) -> np.ndarray:
    cm = np.zeros((2, 2), dtype=int)
    np.add.at(cm, (np.asarray(actual, int), np.asarray(predicted, int)), 1)
    return cm


def select_reference_region(timelines: Mapping[str, MetricsTimeline]) -> str:
    """Region with the highest mean SNR; ties go to the canonical region order."""
    if not timelines or all(len(t) == 0 for t in timelines.values()):
        raise NoRegions("no region timelines to choose from")
    order = [n for n in REGION_NAMES if n in timelines] + [
        n for n in timelines if n not in REGION_NAMES
    ]
    best, best_snr = None, -math.inf
    for name in order:
        snr = timelines[name].column("snr_db")
        if snr.size == 0 or np.all(np.isnan(snr)):
            continue
        mean = float(np.nanmean(snr))
        if best is None or mean > best_snr:
            best, best_snr = name, mean
    if best is None:
        raise NoRegions("no region has a defined SNR")
    return best


def extract_feature_table(
    seq,
    landmarks,
    cfg: AnalysisConfig | None,
    label: int,
    subject_id: str,
    video_id: str = "",
    **kwargs,
) -> list[PadSample]:
    """One sample per (region, window).

    An undefined correlation (flat signal) becomes 0 and an undefined SNR the
    lower clamp, so every sample stays finite.
    """
    result = analyze_regions(seq, landmarks, cfg, **kwargs)
    samples = []
    for name in REGION_NAMES:
        for w, e in enumerate(result.timelines[name].entries):
            snr = e.snr_db if math.isfinite(e.snr_db) else -SNR_CLAMP_DB
            samples.append(
                PadSample(
                    subject_id=str(subject_id),
                    region=name,
                    window_index=w,
                    snr_db=snr,
                    magnitude=e.magnitude,
                    rho_ref=0.0 if e.rho_ref is None else e.rho_ref,
                    label=int(label),
                    video_id=video_id,
                )
            )
    return samples


def write_feature_csv(path, samples: list[PadSample]) -> Path:
    path = Path(path)
    with_video = any(s.video_id for s in samples)
    cols = CSV_COLUMNS + (("video_id",) if with_video else ())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for s in samples:
            # repr is the shortest string that reads back to the same float
            row = [s.subject_id, s.region, s.window_index, repr(float(s.snr_db)),
                   repr(float(s.magnitude)), repr(float(s.rho_ref)), s.label]
            if with_video:
                row.append(s.video_id)
            writer.writerow(row)
    return path


def read_feature_csv(path) -> list[PadSample]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
            if missing - {"label"}:
                raise InputError(f"{path}: missing columns {sorted(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        return [
            PadSample(
                subject_id=r["subject_id"],
                region=r["region"],
                window_index=int(r["window"]),
                snr_db=float(r["snr_db"]),
                magnitude=float(r["magnitude"]),
                rho_ref=float(r["rho_ref"]),
                label=int(r["label"]) if r.get("label", "") != "" else 0,
                video_id=r.get("video_id", "") or "",
            )
            for r in rows
        ]
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def feature_matrix(samples: list[PadSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.array([s.features for s in samples], dtype=float).reshape(-1, len(FEATURES))
    y = np.array([s.label for s in samples], dtype=int)
    groups = np.array([s.subject_id for s in samples])
    return x, y, groups


def subject_folds(groups: np.ndarray, folds: int, labels: np.ndarray | None = None) -> list[np.ndarray]:
    """Validation indices per fold; every subject lands in exactly one fold.

    Subjects are placed largest first onto the fold holding the fewest
    samples so far (lowest fold index on ties). With `labels`, the load is
    counted per subject's majority label, so each class spreads over the
    folds and no training part is left with a single class by accident.
    """
    groups = np.asarray(groups)
    subjects, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    if subjects.size < folds:
        raise InsufficientData(f"{subjects.size} subjects cannot fill {folds} subject-disjoint folds")
    if labels is None:
        majority = np.zeros(subjects.size, dtype=int)
    else:
        ones = np.bincount(inverse, weights=np.asarray(labels) == 1, minlength=subjects.size)
        majority = (2 * ones > counts).astype(int)
    order = sorted(range(subjects.size), key=lambda k: (-counts[k], subjects[k]))
    class_load = np.zeros((2, folds), dtype=int)
    load = np.zeros(folds, dtype=int)
    members: list[list[str]] = [[] for _ in range(folds)]
    for k in order:
        c = majority[k]
        f = min(range(folds), key=lambda j: (class_load[c, j], load[j], j))
        members[f].append(subjects[k])
        class_load[c, f] += counts[k]
        load[f] += counts[k]
    return [np.flatnonzero(np.isin(groups, m)) for m in members]


def subject_split(groups: np.ndarray, train_fraction: float = 0.803, seed: int = 0):
    """Random subject-disjoint split whose training share approaches `train_fraction`."""
    rng = np.random.default_rng(seed)
    subjects = np.unique(groups)
    rng.shuffle(subjects)
    target = train_fraction * len(groups)
    train_subjects, n_train = [], 0
    for s in subjects:
        n = int(np.sum(groups == s))
        if n_train and abs(n_train + n - target) > abs(n_train - target):
            continue
        train_subjects.append(s)
        n_train += n
    train = np.isin(groups, train_subjects)
    return np.flatnonzero(train), np.flatnonzero(~train)


def _check_training_data(y: np.ndarray, folds: int):
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise SingleClass("training data holds a single class")
    if counts.min() < folds:
        raise InsufficientData(f"need at least {folds} samples per class, have {counts.min()}")


def cross_validate(x, y, groups, folds: int = 10, **svm_kwargs) -> CvReport:
    fold_idx = subject_folds(groups, folds, y)
    accuracies = []
    cm = np.zeros((2, 2), dtype=int)
    for val in fold_idx:
        train = np.setdiff1d(np.arange(len(y)), val)
        model, _ = fit_svm(x[train], y[train], **svm_kwargs)
        pred, _ = svm_predict(model, x[val])
        accuracies.append(float(np.mean(pred == y[val])))
        cm += confusion_matrix(y[val], pred)
    return CvReport(accuracies, cm, fold_idx)


def svm_train(
    samples: list[PadSample],
    folds: int = 10,
    *,
    C: float = 1.0,
    gamma: float | None = None,
    coef0: float = 1.0,
    scaler: Scaler | None = None,
) -> tuple[SvmModel, CvReport]:
    """Subject-disjoint k-fold cross-validation, then a final fit on all samples."""
    x, y, groups = feature_matrix(samples)
    _check_training_data(y, folds)
    kwargs = dict(C=C, gamma=gamma, coef0=coef0, scaler=scaler)
    report = cross_validate(x, y, groups, folds, **kwargs)
    model, _ = fit_svm(x, y, **kwargs)
    return model, report


def classify_samples(model: SvmModel, samples: list[PadSample]):
    x, _, _ = feature_matrix(samples)
    return svm_predict(model, x)


def video_verdict(labels) -> int:
    """Majority vote over one video's samples; a tie counts as an attack."""
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise InsufficientData("no samples to vote on")
    return int(2 * labels.sum() >= labels.size)
