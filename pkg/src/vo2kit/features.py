"""Model inputs and auxiliary metrics extracted from a processed session."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .core import HrStream, Participant, SessionRecording, ValidationError, compute_bmi
from .protocol import CpsjtOutcome

HRR_WINDOWS = (30, 60, 120)
AEROBIC_FRACTION = 0.80


@dataclass(frozen=True)
class FeatureVector:
    id: str
    gender_code: int
    bmi: float
    aerobic_s: float
    anaerobic_s: float
    endured_raw_s: float
    endured_interp_s: float
    hrr30: Optional[float] = None
    hrr60: Optional[float] = None
    hrr120: Optional[float] = None
    vo2max: Optional[float] = None

    def __post_init__(self):
        if self.gender_code not in (0, 1):
            raise ValidationError("gender_code must be 0 or 1", field="gender_code")
        for name in ("aerobic_s", "anaerobic_s", "endured_raw_s", "endured_interp_s"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative", field=name)

    def get(self, name: str) -> Optional[float]:
        if name == "gender":
            name = "gender_code"
        return getattr(self, name)

    def model_inputs(self) -> list[float]:
        return [float(self.gender_code), self.bmi, self.aerobic_s, self.anaerobic_s]


MODEL_FEATURES = ("gender", "bmi", "aerobic_s", "anaerobic_s")
FEATURE_FIELDS = tuple(f.name for f in fields(FeatureVector))


def _split_seconds(total_ms: int, part_ms: int) -> tuple[float, float]:
    """Seconds for ``part_ms`` and its complement, summing to exactly total/1000.

    The larger share is rounded from its millisecond count; the smaller is
    obtained by subtraction, which is exact for operands within a factor of
    two of each other.
    """
    total = total_ms / 1000.0
    rest_ms = total_ms - part_ms
    if 2 * part_ms >= total_ms:
        part = part_ms / 1000.0
        return part, total - part
    rest = rest_ms / 1000.0
    return total - rest, rest


def aerobic_anaerobic_split(hr_stream: HrStream, endured_raw: float, cpet_max_hr: float,
                            threshold_fraction: float = AEROBIC_FRACTION) -> tuple[float, float]:
    """Time below / at-or-above ``threshold_fraction * cpet_max_hr`` over [0, endured_raw].

    Each inter-sample interval takes the class of its left sample; the span
    before the first sample takes the first sample's class.
    """
    end_ms = round(endured_raw * 1000)
    t = hr_stream.t_ms
    if len(t) == 0 or t[-1] < end_ms:
        raise ValidationError("truncated stream: hr samples do not cover the endured duration")
    threshold = threshold_fraction * cpet_max_hr

    left = np.searchsorted(t, end_ms, side="left")
    # sample i owns [t_i, t_{i+1}) clipped to [0, end_ms]; sample 0 also owns [0, t_0)
    starts = np.concatenate(([0], t[1:left]))
    stops = np.concatenate((t[1:left], [end_ms])) if left > 0 else np.array([end_ms])
    owner = np.arange(max(left, 1))
    durations = np.maximum(stops - starts, 0)
    hot = hr_stream.bpm[owner] >= threshold
    anaerobic_ms = int(durations[hot].sum())
    aerobic_ms = end_ms - anaerobic_ms
    return _split_seconds(end_ms, aerobic_ms)


def _interp_at(t_s: np.ndarray, hr: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.interp(q, t_s, hr)


def hrr(hr_stream: HrStream, recovery_start: int, window: float) -> float:
    """Largest drop HR(t) - HR(t + window) for t at or after ``recovery_start`` (ms).

    HR is linearly interpolated between samples. The drop is piecewise
    linear in t with breakpoints at sample times and at sample times minus
    ``window``, so evaluating those candidates gives the exact maximum.
    """
    t_s = hr_stream.t_s
    hr = hr_stream.bpm
    start = recovery_start / 1000.0
    if len(t_s) == 0 or t_s[-1] - start < window or start < t_s[0]:
        raise ValidationError(
            f"insufficient recovery data: need {window:g} s of samples after {start:g} s")
    last = t_s[-1] - window
    cand = np.concatenate(([start, last], t_s, t_s - window))
    cand = cand[(cand >= start) & (cand <= last)]
    drops = _interp_at(t_s, hr, cand) - _interp_at(t_s, hr, cand + window)
    return float(drops.max())


def build_feature_vector(p: Participant, outcome: CpsjtOutcome, rec: SessionRecording) -> FeatureVector:
    aerobic, anaerobic = aerobic_anaerobic_split(rec.hr, outcome.endured_raw, p.cpet_max_hr)
    extra = outcome.endured_interpolated - outcome.endured_raw
    if extra > 0:
        # extrapolated time sits above the aerobic threshold
        anaerobic = outcome.endured_interpolated - aerobic
    recov = {}
    for w in HRR_WINDOWS:
        value = None
        if rec.recovery_start is not None:
            try:
                value = hrr(rec.hr, rec.recovery_start, w)
            except ValidationError:
                value = None
        recov[f"hrr{w}"] = value
    return FeatureVector(
        id=p.id,
        gender_code=p.gender.code,
        bmi=compute_bmi(p.weight, p.height),
        aerobic_s=aerobic,
        anaerobic_s=anaerobic,
        endured_raw_s=outcome.endured_raw,
        endured_interp_s=outcome.endured_interpolated,
        vo2max=p.cpet_vo2max,
        **recov,
    )
