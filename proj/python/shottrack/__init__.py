"""Shot detection and classification from wrist-worn IMU recordings."""

from ._core import (
    CLASS_NAMES,
    Classifier,
    Detector,
    analyze,
    band_decompose,
    detect_peaks,
    grad_audit,
    load_recording,
    mirror_handedness,
    refine,
    resample,
    synth_session,
    synth_shot,
    train_classifier,
    train_detector,
)

__all__ = [
    "CLASS_NAMES",
    "Classifier",
    "Detector",
    "analyze",
    "band_decompose",
    "detect_peaks",
    "grad_audit",
    "load_recording",
    "mirror_handedness",
    "refine",
    "resample",
    "synth_session",
    "synth_shot",
    "train_classifier",
    "train_detector",
]
