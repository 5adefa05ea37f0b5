"""Threshold detection on observer estimates with latching and latency records."""
from dataclasses import dataclass, field

import numpy as np

DEFAULT_THRESHOLDS = (12.0, 12.0, 1.0)


@dataclass
class DetectionConfig:
    """Per-axis thresholds (N, N, N*m) and the number of consecutive samples required."""

    thresholds: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_THRESHOLDS))
    debounce: int = 1

    def __post_init__(self):
        self.thresholds = np.broadcast_to(np.asarray(self.thresholds, float), (3,)).copy()
        if np.any(self.thresholds <= 0):
            raise ValueError("thresholds must be positive")
        if int(self.debounce) < 1:
            raise ValueError("debounce must be at least one sample")
        self.debounce = int(self.debounce)


@dataclass
class ContactEvent:
    observer: str
    t_onset: float
    t_detect: float
    axis: int
    label: str = ""

    @property
    def delta_t_cd(self):
        if self.t_onset is None or np.isnan(self.t_onset):
            return float("nan")
        return self.t_detect - self.t_onset


def check(F_hat, cfg):
    """``(triggered, axis)``: whether any ``|F_hat_i|`` exceeds its threshold.

    The lowest exceeding axis is reported; ``axis`` is -1 when nothing fires.
    """
    over = np.abs(np.asarray(F_hat, float)) > cfg.thresholds
    if not over.any():
        return False, -1
    return True, int(np.argmax(over))


class Detector:
    """Latching detector for one observer stream."""

    def __init__(self, observer, cfg):
        self.observer = observer
        self.cfg = cfg
        self.reset()

    def reset(self):
        self.triggered = False
        self.t_detect = None
        self.axis = -1
        self._count = 0

    def update(self, t, F_hat):
        """Feed one sample; returns True only on the sample that latches."""
        if self.triggered:
            return False
        hit, axis = check(F_hat, self.cfg)
        self._count = self._count + 1 if hit else 0
        if self._count >= self.cfg.debounce:
            self.triggered = True
            self.t_detect = float(t)
            self.axis = axis
            return True
        return False

    def event(self, t_onset, label=""):
        if not self.triggered:
            return None
        onset = float("nan") if t_onset is None else float(t_onset)
        return ContactEvent(self.observer, onset, self.t_detect, self.axis, label)
