"""Domain types shared across the package.

Timestamps are integer milliseconds since session start. Heart rate is in
beats/min, acceleration in g, height in metres and weight in kilograms.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a domain invariant.

    ``field`` names the offending field when there is a single culprit;
    ``violations`` carries the full list for stream-level checks.
    """

    def __init__(self, message: str, field: str | None = None, violations=None):
        super().__init__(message)
        self.field = field
        self.violations = list(violations or [])


class Gender(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"

    @property
    def code(self) -> int:
        return 1 if self is Gender.MALE else 0


class SessionKind(str, enum.Enum):
    CPET = "cpet"
    CPSJT = "cpsjt"


def _check_range(name: str, value: float, lo: float, hi: float, inclusive=False):
    ok = lo <= value <= hi if inclusive else lo < value < hi
    if not ok or not np.isfinite(value):
        bounds = f"[{lo}, {hi}]" if inclusive else f"({lo}, {hi})"
        raise ValidationError(f"{name}={value!r} outside {bounds}", field=name)


@dataclass(frozen=True)
class Participant:
    id: str
    gender: Gender
    age: int
    height: float
    weight: float
    cpet_max_hr: float
    cpet_vo2max: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "gender", Gender(self.gender))
        if not self.id:
            raise ValidationError("participant id must be non-empty", field="id")
        if int(self.age) != self.age or self.age < 18:
            raise ValidationError(f"age={self.age!r} must be an integer >= 18", field="age")
        _check_range("height", self.height, 1.0, 2.5)
        _check_range("weight", self.weight, 25.0, 250.0)
        _check_range("cpet_max_hr", self.cpet_max_hr, 60.0, 230.0)
        if self.cpet_vo2max is not None:
            _check_range("cpet_vo2max", self.cpet_vo2max, 10.0, 95.0)

    @property
    def bmi(self) -> float:
        return compute_bmi(self.weight, self.height)


class HrSample(NamedTuple):
    t: int
    hr: float


class AccelSample(NamedTuple):
    t: int
    ax: float
    ay: float
    az: float


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HrStream:
    """Heart-rate samples as parallel arrays."""

    t_ms: np.ndarray
    bpm: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t_ms, np.int64).reshape(-1)
        hr = _frozen(self.bpm, np.float64).reshape(-1)
        if t.shape != hr.shape:
            raise ValidationError("hr stream: t and bpm lengths differ")
        object.__setattr__(self, "t_ms", t)
        object.__setattr__(self, "bpm", hr)

    @classmethod
    def from_samples(cls, samples: Iterable[HrSample]) -> "HrStream":
        samples = list(samples)
        return cls([s[0] for s in samples], [s[1] for s in samples])

    @property
    def t_s(self) -> np.ndarray:
        return self.t_ms / 1000.0

    def __len__(self):
        return len(self.t_ms)

    def samples(self) -> list[HrSample]:
        return [HrSample(int(t), float(h)) for t, h in zip(self.t_ms, self.bpm)]

    def __eq__(self, other):
        if not isinstance(other, HrStream):
            return NotImplemented
        return np.array_equal(self.t_ms, other.t_ms) and np.array_equal(self.bpm, other.bpm)

    def shifted(self, dt_ms: int) -> "HrStream":
        return HrStream(self.t_ms + dt_ms, self.bpm)


@dataclass(frozen=True, eq=False)
class AccelStream:
    """Tri-axial acceleration; ``xyz`` has shape (n, 3)."""

    t_ms: np.ndarray
    xyz: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t_ms, np.int64).reshape(-1)
        xyz = _frozen(self.xyz, np.float64).reshape(-1, 3)
        if len(t) != len(xyz):
            raise ValidationError("accel stream: t and xyz lengths differ")
        object.__setattr__(self, "t_ms", t)
        object.__setattr__(self, "xyz", xyz)

    @classmethod
    def empty(cls) -> "AccelStream":
        return cls(np.zeros(0, np.int64), np.zeros((0, 3)))

    @classmethod
    def from_samples(cls, samples: Iterable[AccelSample]) -> "AccelStream":
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls([s[0] for s in samples], [s[1:4] for s in samples])

    def __len__(self):
        return len(self.t_ms)

    def samples(self) -> list[AccelSample]:
        return [AccelSample(int(t), *map(float, v)) for t, v in zip(self.t_ms, self.xyz)]

    def __eq__(self, other):
        if not isinstance(other, AccelStream):
            return NotImplemented
        return np.array_equal(self.t_ms, other.t_ms) and np.array_equal(self.xyz, other.xyz)


@dataclass(frozen=True)
class SessionRecording:
    participant_id: str
    kind: SessionKind
    hr: HrStream
    accel: AccelStream = field(default_factory=AccelStream.empty)
    recovery_start: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SessionKind(self.kind))
        if self.recovery_start is not None:
            object.__setattr__(self, "recovery_start", int(self.recovery_start))

    @property
    def span_ms(self) -> tuple[int, int] | None:
        ends = [s.t_ms for s in (self.hr, self.accel) if len(s)]
        if not ends:
            return None
        return int(min(e[0] for e in ends)), int(max(e[-1] for e in ends))


class Violation(NamedTuple):
    stream: str
    index: int
    rule: str


def compute_bmi(weight: float, height: float) -> float:
    # closed bounds so unit height is accepted
    _check_range("weight", weight, 25.0, 250.0, inclusive=True)
    _check_range("height", height, 1.0, 2.5, inclusive=True)
    return weight / height**2


def theoretical_max_hr(age: float) -> float:
    """Age-predicted maximum heart rate, 220 - age."""
    _check_range("age", age, 10, 90, inclusive=True)
    return 220.0 - age


def _time_violations(name: str, t: np.ndarray) -> list[Violation]:
    out = [Violation(name, int(i), "non-negative t") for i in np.flatnonzero(t < 0)]
    if len(t) > 1:
        bad = np.flatnonzero(np.diff(t) <= 0) + 1
        out += [Violation(name, int(i), "strictly increasing t") for i in bad]
    return out


def validate_recording(rec: SessionRecording) -> list[Violation]:
    """Return every invariant violation in ``rec``; empty means well-formed."""
    out = _time_violations("hr", rec.hr.t_ms)
    hr = rec.hr.bpm
    for i in np.flatnonzero(~((hr >= 25) & (hr <= 250))):
        out.append(Violation("hr", int(i), "hr range"))

    out += _time_violations("accel", rec.accel.t_ms)
    xyz = rec.accel.xyz
    bad_rows = ~np.all(np.abs(xyz) <= 16, axis=1)
    for i in np.flatnonzero(bad_rows):
        out.append(Violation("accel", int(i), "accel range"))

    if rec.recovery_start is not None:
        span = rec.span_ms
        if span is None or not span[0] <= rec.recovery_start <= span[1]:
            out.append(Violation("recovery_start", 0, "recovery_start within span"))
    out.sort(key=lambda v: (v.stream != "hr", v.stream, v.index))
    return out
