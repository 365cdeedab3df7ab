"""Spot-jog test session logic and the treadmill ramp schedule.

The session walks the heart-rate and acceleration streams in time order and
stops at the first of three triggers: heart rate reaching the configured
limit, movement staying below the current level's lower bound for the grace
period, or the game clock running out. Sessions stopped by movement failure
get an extrapolated endurance estimate.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.signal import lfilter

from .core import (
    AccelStream,
    HrStream,
    Participant,
    SessionKind,
    SessionRecording,
    ValidationError,
    theoretical_max_hr,
)

HIGHPASS_CUTOFF_HZ = 0.5
EPOCH_MS = 1000
MEDIAN_WIDTH = 5


class TerminationMode(str, enum.Enum):
    CPET_MAX_HR = "cpet_max_hr"
    LEGACY_THEORETICAL = "legacy_theoretical"


class TerminationReason(str, enum.Enum):
    HR_LIMIT = "hr_limit"
    MOVEMENT_FAILURE = "movement_failure"
    TIME_ELAPSED = "time_elapsed"


class TruncatedSessionError(ValidationError):
    pass


class InterpolationWarning(UserWarning):
    pass


def default_level_bounds(n_levels: int = 24) -> list[tuple[float, float]]:
    """Lower bound 0.05 + 0.02 L g-RMS, band width 0.15."""
    out = []
    for level in range(n_levels):
        lower = round(0.05 + 0.02 * level, 10)
        out.append((lower, round(lower + 0.15, 10)))
    return out


@dataclass(frozen=True)
class CpsjtConfig:
    level_duration: float = 30.0
    max_game_duration: float = 720.0
    hr_allowance: float = 10.0
    termination_mode: TerminationMode = TerminationMode.CPET_MAX_HR
    legacy_fraction: float = 0.90
    interp_factor: float = 0.75
    grace_period: float = 3.0
    level_cadence_bounds: tuple = field(default_factory=lambda: tuple(default_level_bounds()))

    def __post_init__(self):
        object.__setattr__(self, "termination_mode", TerminationMode(self.termination_mode))
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.level_cadence_bounds)
        object.__setattr__(self, "level_cadence_bounds", bounds)
        if not 0 < self.interp_factor <= 1:
            raise ValidationError("interp_factor must lie in (0, 1]", field="interp_factor")
        if self.level_duration <= 0:
            raise ValidationError("level_duration must be positive", field="level_duration")
        if self.max_game_duration <= 0:
            raise ValidationError("max_game_duration must be positive", field="max_game_duration")
        if self.grace_period < 0:
            raise ValidationError("grace_period must be non-negative", field="grace_period")
        if len(bounds) < math.ceil(self.max_game_duration / self.level_duration):
            raise ValidationError(
                "level_cadence_bounds must cover every level of the game",
                field="level_cadence_bounds",
            )
        for lo, hi in bounds:
            if not lo < hi:
                raise ValidationError("each level needs lower < upper", field="level_cadence_bounds")

    @property
    def n_levels(self) -> int:
        return math.ceil(self.max_game_duration / self.level_duration)

    def hr_limit(self, p: Participant) -> float:
        if self.termination_mode is TerminationMode.LEGACY_THEORETICAL:
            return self.legacy_fraction * theoretical_max_hr(p.age)
        return p.cpet_max_hr - self.hr_allowance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["termination_mode"] = self.termination_mode.value
        d["level_cadence_bounds"] = [list(b) for b in self.level_cadence_bounds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CpsjtConfig":
        return cls(**d)


class LevelStat(NamedTuple):
    level: int
    mean_movement: float
    mean_hr: float


@dataclass(frozen=True)
class CpsjtOutcome:
    termination_reason: TerminationReason
    endured_raw: float
    endured_interpolated: float
    actual_max_hr: float
    hr_limit: float
    level_log: tuple = ()
    interpolation_fallback: bool = False

    @property
    def extra_time(self) -> float:
        return self.endured_interpolated - self.endured_raw

    def to_dict(self) -> dict:
        return {
            "termination_reason": self.termination_reason.value,
            "endured_raw": self.endured_raw,
            "endured_interpolated": self.endured_interpolated,
            "actual_max_hr": self.actual_max_hr,
            "hr_limit": self.hr_limit,
            "interpolation_fallback": self.interpolation_fallback,
            "level_log": [s._asdict() for s in self.level_log],
        }


@dataclass(frozen=True)
class CpetSchedule:
    speed: float = 5.0
    incline_step: float = 1.0
    max_duration: float = 25.0
    recovery_speed: float = 3.0
    recovery_duration: float = 2.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValidationError(f"{name} must be positive", field=name)


# -- signal helpers ---------------------------------------------------------


def smooth_hr(bpm: np.ndarray, width: int = MEDIAN_WIDTH) -> np.ndarray:
    """Centred running median with edge replication."""
    bpm = np.asarray(bpm, dtype=float)
    if len(bpm) == 0:
        return bpm.copy()
    half = width // 2
    padded = np.pad(bpm, half, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, width)
    return np.median(windows, axis=1)


def peak_hr(stream: HrStream) -> float:
    """Maximum of the median-smoothed heart rate."""
    if len(stream) == 0:
        raise ValidationError("empty hr stream")
    return float(smooth_hr(stream.bpm).max())


def _sample_interval_s(t_ms: np.ndarray) -> float:
    if len(t_ms) < 2:
        raise ValidationError("need at least two accel samples")
    return float(np.median(np.diff(t_ms))) / 1000.0


def highpass(x: np.ndarray, dt: float, cutoff_hz: float = HIGHPASS_CUTOFF_HZ) -> np.ndarray:
    """First-order RC high-pass; output starts at zero (no start-up step)."""
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return x.copy()
    rc = 1.0 / (2.0 * math.pi * cutoff_hz)
    alpha = rc / (rc + dt)
    y, _ = lfilter([alpha, -alpha], [1.0, -alpha], x, zi=[-alpha * x[0]])
    return y


def _filtered_magnitude(accel: AccelStream) -> np.ndarray:
    mag = np.sqrt(np.sum(accel.xyz**2, axis=1))
    return highpass(mag, _sample_interval_s(accel.t_ms))


def movement_index(window: AccelStream) -> float:
    """RMS of the gravity-removed acceleration magnitude over ``window``."""
    if len(window) == 0:
        raise ValidationError("empty window")
    dt = _sample_interval_s(window.t_ms)
    span = (window.t_ms[-1] - window.t_ms[0]) / 1000.0 + dt
    if span < 1.0 - 1e-9:
        raise ValidationError(f"window spans {span:.3f} s, need at least 1 s")
    y = _filtered_magnitude(window)
    return float(np.sqrt(np.mean(y**2)))


def epoch_movement(accel: AccelStream, n_epochs: int) -> np.ndarray:
    """Movement index for each consecutive 1 s epoch; empty epochs read 0."""
    out = np.zeros(n_epochs)
    if len(accel) < 2 or n_epochs == 0:
        return out
    y = _filtered_magnitude(accel)
    k = accel.t_ms // EPOCH_MS
    keep = (k >= 0) & (k < n_epochs)
    sq = np.bincount(k[keep], weights=y[keep] ** 2, minlength=n_epochs)
    cnt = np.bincount(k[keep], minlength=n_epochs)
    np.divide(sq, cnt, out=out, where=cnt > 0)
    return np.sqrt(out)


# -- session logic ----------------------------------------------------------


def _interpolation_extra(hr_stream: HrStream, endured_raw: float, actual_max_hr: float,
                         cpet_max_hr: float, interp_factor: float) -> tuple[float, bool]:
    """Return (extra seconds, fell_back)."""
    delta = cpet_max_hr - actual_max_hr
    if delta <= 0:
        return 0.0, False
    inside = hr_stream.t_ms <= round(endured_raw * 1000)
    t = hr_stream.t_ms[inside]
    hr = hr_stream.bpm[inside]
    if len(hr) == 0:
        return 0.0, True
    reached = np.flatnonzero(hr >= actual_max_hr - 1e-9)
    i_max = int(reached[0]) if len(reached) else int(np.argmax(hr))
    low = np.flatnonzero(hr[: i_max + 1] <= actual_max_hr - delta)
    if len(low) == 0:
        return 0.0, True
    climb_ms = int(t[i_max] - t[low[-1]])
    return interp_factor * climb_ms / 1000.0, False


def interpolate_endurance(hr_stream: HrStream, endured_raw: float, actual_max_hr: float,
                          cpet_max_hr: float, interp_factor: float = 0.75) -> float:
    """Extrapolate how long a movement-limited session could have lasted.

    The heart-rate gap to the CPET maximum is mapped onto the time the
    final climb took to cover the same gap below the session peak, scaled
    by ``interp_factor``. Warns and returns ``endured_raw`` unchanged when
    the stream never dips that far below its peak.
    """
    extra, fell_back = _interpolation_extra(hr_stream, endured_raw, actual_max_hr,
                                            cpet_max_hr, interp_factor)
    if fell_back:
        warnings.warn("no sample at or below the interpolation floor; using raw duration",
                      InterpolationWarning, stacklevel=2)
    return endured_raw + extra


def run_cpsjt(rec: SessionRecording, p: Participant, cfg: CpsjtConfig | None = None) -> CpsjtOutcome:
    cfg = cfg or CpsjtConfig()
    if rec.kind is not SessionKind.CPSJT:
        raise ValidationError(f"expected a cpsjt recording, got {rec.kind.value}", field="kind")
    if len(rec.hr) == 0 or len(rec.accel) == 0:
        raise ValidationError("cpsjt recording needs non-empty hr and accel streams")

    hr_t = rec.hr.t_ms
    smooth = smooth_hr(rec.hr.bpm)
    limit = cfg.hr_limit(p)
    max_ms = round(cfg.max_game_duration * 1000)
    level_ms = round(cfg.level_duration * 1000)
    grace_ms = round(cfg.grace_period * 1000)

    candidates: list[tuple[int, int, TerminationReason]] = []
    over = np.flatnonzero(smooth >= limit)
    if len(over):
        candidates.append((int(hr_t[over[0]]), 0, TerminationReason.HR_LIMIT))

    acc_dt = int(np.median(np.diff(rec.accel.t_ms))) if len(rec.accel) > 1 else 0
    covered = max(int(hr_t[-1]), int(rec.accel.t_ms[-1]) + acc_dt)
    n_epochs = max(0, covered // EPOCH_MS)
    movement = epoch_movement(rec.accel, n_epochs)
    lower = np.array([b[0] for b in cfg.level_cadence_bounds])
    levels = np.minimum(np.arange(n_epochs) * EPOCH_MS // level_ms, len(lower) - 1)
    below = movement < lower[levels]
    run_start = None
    for k in range(n_epochs):
        if not below[k]:
            run_start = None
            continue
        if run_start is None:
            run_start = k * EPOCH_MS
        if (k + 1) * EPOCH_MS >= run_start + grace_ms:
            candidates.append((run_start + grace_ms, 1, TerminationReason.MOVEMENT_FAILURE))
            break

    if max(int(hr_t[-1]), int(rec.accel.t_ms[-1])) >= max_ms:
        candidates.append((max_ms, 2, TerminationReason.TIME_ELAPSED))

    candidates = [c for c in candidates if c[0] <= max_ms]
    if not candidates:
        raise TruncatedSessionError("truncated session: recording ends before any termination trigger")
    end_ms, _, reason = min(candidates)
    endured_raw = end_ms / 1000.0

    inside = hr_t <= end_ms
    actual_max = float(smooth[inside].max()) if inside.any() else float(smooth[0])

    extra, fell_back = 0.0, False
    if reason is TerminationReason.MOVEMENT_FAILURE:
        extra, fell_back = _interpolation_extra(HrStream(hr_t, smooth), endured_raw, actual_max,
                                                p.cpet_max_hr, cfg.interp_factor)

    log = []
    for level in range(min(len(lower), math.ceil(end_ms / level_ms))):
        lo_ms, hi_ms = level * level_ms, min((level + 1) * level_ms, end_ms)
        ep = np.arange(n_epochs)
        sel_ep = (ep * EPOCH_MS >= lo_ms) & (ep * EPOCH_MS < hi_ms)
        sel_hr = (hr_t >= lo_ms) & (hr_t < hi_ms)
        log.append(LevelStat(
            level,
            float(movement[sel_ep].mean()) if sel_ep.any() else float("nan"),
            float(rec.hr.bpm[sel_hr].mean()) if sel_hr.any() else float("nan"),
        ))

    return CpsjtOutcome(
        termination_reason=reason,
        endured_raw=endured_raw,
        endured_interpolated=endured_raw + extra,
        actual_max_hr=actual_max,
        hr_limit=float(limit),
        level_log=tuple(log),
        interpolation_fallback=fell_back,
    )


def cpet_intensity_at(t: float, sched: CpetSchedule | None = None,
                      exhaustion: Optional[float] = None) -> tuple[float, float]:
    """Treadmill (speed km/h, incline %) at ``t`` seconds into the ramp.

    ``exhaustion`` (seconds) ends the exercise phase early. After recovery
    the treadmill is stopped and (0, 0) is returned.
    """
    sched = sched or CpetSchedule()
    if t < 0:
        raise ValidationError("t must be non-negative", field="t")
    end_ex = sched.max_duration * 60.0
    if exhaustion is not None:
        end_ex = min(end_ex, exhaustion)
    if t < end_ex:
        return sched.speed, sched.incline_step * math.floor(t / 60.0)
    if t < end_ex + sched.recovery_duration * 60.0:
        return sched.recovery_speed, 0.0
    return 0.0, 0.0
