"""Synthetic participants and sessions for end-to-end testing.

Heart rate follows a first-order response toward an intensity-dependent
steady state. Cohorts are drawn from truncated normals around reference
demographic means, SDs and ranges, and VO2max is assigned as a known
linear function of the extracted features so that model recovery can be
checked against ground truth.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import stats as sps
from scipy.optimize import brentq, minimize_scalar

from .core import AccelStream, Gender, HrStream, Participant, SessionRecording, ValidationError
from .features import FeatureVector, build_feature_vector
from .ingest import CohortEntry, CohortManifest, write_json, write_manifest, write_recording
from .protocol import (
    HIGHPASS_CUTOFF_HZ,
    CpetSchedule,
    CpsjtConfig,
    CpsjtOutcome,
    cpet_intensity_at,
    peak_hr,
    run_cpsjt,
)
from .seeding import child_rng, child_seed


class InfeasibleSpec(ValidationError):
    pass


@dataclass(frozen=True)
class PhysioModel:
    resting_hr: float
    true_max_hr: float
    hr_time_constant: float
    recovery_time_constant: float
    fitness: float
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.resting_hr < self.true_max_hr:
            raise ValidationError("resting_hr must be below true_max_hr", field="resting_hr")
        if self.hr_time_constant <= 0 or self.recovery_time_constant <= 0:
            raise ValidationError("time constants must be positive")
        if not 0 < self.fitness <= 1:
            raise ValidationError("fitness must lie in (0, 1]", field="fitness")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be non-negative", field="noise_sd")

    def steady_state(self, intensity: float) -> float:
        rise = (self.true_max_hr - self.resting_hr) * max(intensity, 0.0) / self.fitness
        return min(self.true_max_hr, self.resting_hr + rise)


def simulate_hr(model: PhysioModel, intensity_schedule: Callable[[float], float], duration: float,
                dt: float = 1.0, hr0: Optional[float] = None, noise_len: Optional[int] = None) -> HrStream:
    """Sample HR every ``dt`` seconds over [0, duration].

    Intensity is held at its value at the start of each step, so the
    noise-free output is exact for schedules that change on the sample grid.
    ``noise_len`` fixes how many noise draws are made; two calls with the
    same seed and ``noise_len`` share their noise prefix.
    """
    n = int(round(duration / dt)) + 1
    hr = np.empty(n)
    state = model.resting_hr if hr0 is None else float(hr0)
    decay_rise = math.exp(-dt / model.hr_time_constant)
    decay_rec = math.exp(-dt / model.recovery_time_constant)
    for k in range(n):
        hr[k] = state
        target = model.steady_state(intensity_schedule(k * dt))
        decay = decay_rise if target > state else decay_rec
        state = target + (state - target) * decay
    if model.noise_sd > 0:
        draws = np.random.default_rng(model.seed).normal(0.0, model.noise_sd, max(n, noise_len or 0))
        hr = hr + draws[:n]
    hr = np.clip(hr, model.resting_hr - 5.0, model.true_max_hr)
    t_ms = np.round(np.arange(n) * dt * 1000).astype(np.int64)
    return HrStream(t_ms, hr)


# -- demographics -----------------------------------------------------------

# (mean, sd, low, high) per gender; height in centimetres
TABLE_I = {
    "female": {"age": (27.29, 7.74, 19, 44), "weight": (62.61, 11.1, 51, 88),
               "height": (160.01, 4.0, 150, 165)},
    "male": {"age": (27.6, 6.37, 19, 41), "weight": (71.92, 9.74, 50, 94),
             "height": (173.26, 6.44, 161, 186)},
}

AGE_BANDS = {"18-30": (18, 29), "30-45": (30, 45)}


@lru_cache(maxsize=None)
def fit_truncated_normal(mean: float, sd: float, lo: float, hi: float) -> tuple[float, float]:
    """Parent (loc, scale) whose truncation to [lo, hi] has exactly ``mean``
    and a standard deviation as close to ``sd`` as the interval allows."""
    if sd <= 0 or not lo < mean < hi:
        raise InfeasibleSpec(f"cannot place mean {mean} with sd {sd} inside [{lo}, {hi}]")

    def loc_for(scale):
        def gap(loc):
            return sps.truncnorm.mean((lo - loc) / scale, (hi - loc) / scale, loc=loc, scale=scale) - mean
        return brentq(gap, lo - 20 * scale, hi + 20 * scale, xtol=1e-12)

    def sd_gap(log_scale):
        scale = math.exp(log_scale)
        loc = loc_for(scale)
        s = sps.truncnorm.std((lo - loc) / scale, (hi - loc) / scale, loc=loc, scale=scale)
        return (s - sd) ** 2

    width = hi - lo
    res = minimize_scalar(sd_gap, bounds=(math.log(width / 50), math.log(width * 3)),
                          method="bounded", options={"xatol": 1e-8})
    scale = math.exp(res.x)
    return loc_for(scale), scale


def _draw(rng, mean, sd, lo, hi, size, band=None):
    loc, scale = fit_truncated_normal(mean, sd, lo, hi)
    a, b = lo, hi
    if band is not None:
        a, b = max(lo, band[0]), min(hi, band[1] + 0.999)
        if a >= b:
            raise InfeasibleSpec(f"age band {band} does not overlap range [{lo}, {hi}]")
    return sps.truncnorm.rvs((a - loc) / scale, (b - loc) / scale, loc=loc, scale=scale,
                             size=size, random_state=rng)


def sample_demographics(gender: str, n: int, rng: np.random.Generator, table=None, band=None) -> dict:
    """Draw age (integer years), height (m, cm resolution) and weight (kg, 0.1 kg)."""
    t = (table or TABLE_I)[Gender(gender).value]
    age = _draw(rng, *t["age"], n, band)
    age = np.floor(age) if band is not None else np.round(age)
    if band is not None:
        age = np.clip(age, band[0], band[1])
    height = np.round(_draw(rng, *t["height"], n)) / 100.0
    weight = np.round(_draw(rng, *t["weight"], n), 1)
    return {"age": age.astype(int), "height": height, "weight": weight}


# -- cohort specification ---------------------------------------------------

DEFAULT_CELLS = (("male", "18-30", 19), ("male", "30-45", 11),
                 ("female", "18-30", 8), ("female", "30-45", 6))
DEFAULT_BETA = {"intercept": 46.0, "gender": 6.0, "bmi": -0.8, "aerobic_s": 0.05, "anaerobic_s": 0.02}


@dataclass(frozen=True)
class CohortSpec:
    cells: tuple = DEFAULT_CELLS
    demographics: dict = field(default_factory=lambda: {g: dict(v) for g, v in TABLE_I.items()})
    beta: dict = field(default_factory=lambda: dict(DEFAULT_BETA))
    sigma: float = 5.0
    interaction: float = 0.0
    movement_limited_fraction: float = 6 / 44
    recovery_s: float = 180.0
    accel_hz: float = 10.0

    def __post_init__(self):
        cells = tuple((str(g), str(b), int(n)) for g, b, n in self.cells)
        object.__setattr__(self, "cells", cells)
        demo = {g: {k: tuple(v) for k, v in d.items()} for g, d in self.demographics.items()}
        object.__setattr__(self, "demographics", demo)
        if any(n < 0 for _, _, n in cells):
            raise InfeasibleSpec("cell counts must be non-negative")
        if self.sigma < 0:
            raise InfeasibleSpec("sigma must be non-negative")
        if not 0 <= self.movement_limited_fraction <= 1:
            raise InfeasibleSpec("movement_limited_fraction must lie in [0, 1]")
        for g, band, _ in cells:
            Gender(g)
            if band not in AGE_BANDS:
                raise InfeasibleSpec(f"unknown age band {band!r}")
        for g, d in demo.items():
            for name, (mean, sd, lo, hi) in d.items():
                if sd <= 0 or not lo < mean < hi:
                    raise InfeasibleSpec(f"{g} {name}: mean {mean} / sd {sd} infeasible in [{lo}, {hi}]")
        missing = {"intercept", "gender", "bmi", "aerobic_s", "anaerobic_s"} - set(self.beta)
        if missing:
            raise InfeasibleSpec(f"beta lacks {sorted(missing)}")

    @property
    def n(self) -> int:
        return sum(n for _, _, n in self.cells)

    def scaled(self, total: int) -> "CohortSpec":
        """Same cell proportions with ``total`` participants (largest remainder)."""
        raw = [n * total / self.n for _, _, n in self.cells]
        counts = [int(math.floor(r)) for r in raw]
        order = sorted(range(len(raw)), key=lambda i: (counts[i] - raw[i], i))
        for i in order[: total - sum(counts)]:
            counts[i] += 1
        cells = tuple((g, b, c) for (g, b, _), c in zip(self.cells, counts))
        return CohortSpec(**{**self.__dict__, "cells": cells})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cells"] = [{"gender": g, "age_band": b, "n": n} for g, b, n in self.cells]
        d["demographics"] = {g: {k: list(v) for k, v in dd.items()} for g, dd in self.demographics.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        if "cells" in d:
            d["cells"] = tuple((c["gender"], c["age_band"], c["n"]) for c in d["cells"])
        if "demographics" in d:
            base = {g: dict(v) for g, v in TABLE_I.items()}
            for g, dd in d["demographics"].items():
                base.setdefault(g, {}).update(dd)
            d["demographics"] = base
        if "beta" in d:
            d["beta"] = {**DEFAULT_BETA, **d["beta"]}
        return cls(**d)


def vo2max_from_features(fv: FeatureVector, beta: dict, interaction: float = 0.0) -> float:
    value = (beta["intercept"] + beta["gender"] * fv.gender_code + beta["bmi"] * fv.bmi
             + beta["aerobic_s"] * fv.aerobic_s + beta["anaerobic_s"] * fv.anaerobic_s)
    if interaction:
        value += interaction * fv.gender_code * fv.aerobic_s / 60.0
    return value


# -- session drivers --------------------------------------------------------

VO2_RANGE = (10.0, 95.0)
REFERENCE_VO2 = 60.0  # mL/kg/min demand mapped to intensity 1


def walking_demand(speed_kmh: float, incline_pct: float) -> float:
    """Treadmill walking oxygen demand (mL/kg/min)."""
    m_per_min = speed_kmh * 1000.0 / 60.0
    return 0.1 * m_per_min + 1.8 * m_per_min * incline_pct / 100.0 + 3.5


def simulate_cpet(model: PhysioModel, sched: CpetSchedule | None = None, exhaustion_margin: float = 1.5,
                  participant_id: str = "") -> tuple[SessionRecording, float]:
    """Treadmill ramp to exhaustion then recovery; returns (recording, exercise end s)."""
    sched = sched or CpetSchedule()
    max_ex = sched.max_duration * 60.0
    clean = PhysioModel(**{**asdict(model), "noise_sd": 0.0})
    probe = simulate_hr(clean, lambda t: walking_demand(*cpet_intensity_at(t, sched)) / REFERENCE_VO2, max_ex)
    hit = np.flatnonzero(probe.bpm >= model.true_max_hr - exhaustion_margin)
    t_ex = float(probe.t_s[hit[0]]) if len(hit) else max_ex
    total = t_ex + sched.recovery_duration * 60.0

    def schedule(t):
        speed, incline = cpet_intensity_at(t, sched, exhaustion=t_ex)
        return walking_demand(speed, incline) / REFERENCE_VO2

    hr = simulate_hr(model, schedule, total, noise_len=int(max_ex + sched.recovery_duration * 60) + 1)
    hr = HrStream(hr.t_ms, np.round(hr.bpm, 2))
    return SessionRecording(participant_id, "cpet", hr, recovery_start=int(round(t_ex * 1000))), t_ex


def level_intensity(level: int) -> float:
    return 0.30 + 0.03 * level


def _cadence_hz(level: int) -> float:
    return 2.0 + 0.05 * level


def _highpass_gain(f: float) -> float:
    return f / math.hypot(f, HIGHPASS_CUTOFF_HZ)


def simulate_cpsjt(model: PhysioModel, p: Participant, cfg: CpsjtConfig, capacity_level: Optional[int],
                   accel_hz: float = 10.0, recovery_s: float = 180.0,
                   seed: int = 0) -> tuple[SessionRecording, CpsjtOutcome]:
    """Play the game until the session logic stops it, then sit for ``recovery_s``.

    A first pass runs the full game to find when the session logic
    terminates; the second pass keeps exercising 2 s past that point (the
    reaction delay) and then switches to seated recovery. Both passes share
    their noise, so samples up to the stop are identical.
    """
    game = cfg.max_game_duration
    lag = 2.0
    horizon = game + 5.0 + recovery_s + lag
    n_hr = int(horizon) + 1
    level_of = lambda t: min(int(t // cfg.level_duration), cfg.n_levels - 1)

    dt_acc = 1.0 / accel_hz
    t_acc = np.round(np.arange(int(horizon * accel_hz) + 1) * dt_acc * 1000).astype(np.int64)
    rng = child_rng(seed, 1)
    jitter = rng.normal(0.0, 0.005, (len(t_acc), 3))
    phase = rng.uniform(0, 2 * math.pi)
    levels = np.minimum(t_acc // int(cfg.level_duration * 1000), cfg.n_levels - 1)
    bounds = np.array(cfg.level_cadence_bounds)
    target = bounds[levels].mean(axis=1)
    freq = np.array([_cadence_hz(int(lv)) for lv in range(cfg.n_levels)])[levels]
    amp = target * math.sqrt(2) / np.array([_highpass_gain(f) for f in freq])
    if capacity_level is not None:
        amp = np.where(levels >= capacity_level, 0.3 * amp, amp)
    # continuous phase despite cadence steps
    cyc = np.concatenate(([0.0], np.cumsum(freq[:-1] * dt_acc)))
    wave = np.sin(2 * math.pi * cyc + phase)

    def build(stop_s: Optional[float]):
        if stop_s is None:
            intensity = lambda t: level_intensity(level_of(t))
            moving = np.ones(len(t_acc), bool)
        else:
            intensity = lambda t: level_intensity(level_of(t)) if t < stop_s else 0.0
            moving = t_acc < stop_s * 1000
        hr = simulate_hr(model, intensity, horizon, noise_len=n_hr)
        z = 1.0 + np.where(moving, amp * wave, 0.0)
        xyz = np.round(np.column_stack([jitter[:, 0], jitter[:, 1], z + jitter[:, 2]]), 4)
        return HrStream(hr.t_ms, np.round(hr.bpm, 2)), AccelStream(t_acc, xyz)

    hr, acc = build(None)
    first = run_cpsjt(SessionRecording(p.id, "cpsjt", hr, acc), p, cfg)
    stop = first.endured_raw + lag
    hr, acc = build(stop)
    end_ms = int(round((stop + recovery_s) * 1000))
    hr = HrStream(hr.t_ms[hr.t_ms <= end_ms], hr.bpm[hr.t_ms <= end_ms])
    keep = acc.t_ms <= end_ms
    acc = AccelStream(acc.t_ms[keep], acc.xyz[keep])
    rec = SessionRecording(p.id, "cpsjt", hr, acc, recovery_start=int(round(first.endured_raw * 1000)))
    return rec, run_cpsjt(rec, p, cfg)


# -- cohort generation ------------------------------------------------------


@dataclass(frozen=True)
class SyntheticParticipant:
    participant: Participant
    physio: PhysioModel
    cpet: SessionRecording
    cpsjt: SessionRecording
    outcome: CpsjtOutcome
    features: FeatureVector
    capacity_level: Optional[int]


@dataclass(frozen=True)
class Cohort:
    spec: CohortSpec
    seed: int
    members: tuple

    @property
    def features(self) -> list[FeatureVector]:
        return [m.features for m in self.members]

    def manifest(self, root=".") -> CohortManifest:
        entries = [CohortEntry(m.participant, f"recordings/{m.participant.id}_cpet.csv",
                               f"recordings/{m.participant.id}_cpsjt.csv",
                               m.cpet.recovery_start, m.cpsjt.recovery_start) for m in self.members]
        return CohortManifest(tuple(entries), Path(root))

    def ground_truth(self) -> dict:
        return {
            "seed": self.seed,
            "beta": self.spec.beta,
            "sigma": self.spec.sigma,
            "interaction": self.spec.interaction,
            "columns": ["gender", "bmi", "aerobic_s", "anaerobic_s"],
            "participants": [
                {"id": m.participant.id, "vo2max": m.participant.cpet_vo2max,
                 "termination_reason": m.outcome.termination_reason.value,
                 "capacity_level": m.capacity_level,
                 "physio": asdict(m.physio)}
                for m in self.members
            ],
        }


def _physio_for(rng, gender: str, age: int, bmi: float, seed: int) -> PhysioModel:
    male = gender == "male"
    return PhysioModel(
        resting_hr=float(np.clip(rng.normal(68, 7), 48, 90)),
        true_max_hr=float(np.clip(208 - 0.7 * age + rng.normal(0, 6), 165, 215)),
        hr_time_constant=float(rng.uniform(25, 45)),
        recovery_time_constant=float(rng.uniform(45, 90)),
        fitness=float(np.clip(0.62 + 0.06 * male - 0.012 * (bmi - 23) + rng.normal(0, 0.09), 0.3, 1.0)),
        noise_sd=1.0,
        seed=seed,
    )


def _make_participant(spec: CohortSpec, cfg: CpsjtConfig, seed: int, i: int, gender: str,
                      band: str) -> SyntheticParticipant:
    rng = child_rng(seed, i, 0)
    demo = sample_demographics(gender, 1, rng, spec.demographics, AGE_BANDS[band])
    age, height, weight = int(demo["age"][0]), float(demo["height"][0]), float(demo["weight"][0])
    bmi = weight / height**2
    physio = _physio_for(rng, gender, age, bmi, child_seed(seed, i, 2))
    pid = f"P{i + 1:03d}"
    cpet, _ = simulate_cpet(physio, participant_id=pid)
    cpet_max = peak_hr(cpet.hr)
    limited = rng.uniform() < spec.movement_limited_fraction
    lead = int(rng.integers(1, 4))
    p = Participant(pid, gender, age, height, weight, cpet_max)

    def run(cap):
        return simulate_cpsjt(physio, p, cfg, cap, spec.accel_hz, spec.recovery_s, seed=child_seed(seed, i, 3))

    cpsjt, outcome = run(None)
    capacity = None
    if limited:
        # movement gives out a few levels before HR would have stopped the game
        capacity = max(1, int(outcome.endured_raw // cfg.level_duration) - lead)
        cpsjt, outcome = run(capacity)
    fv = build_feature_vector(p, outcome, cpsjt)
    base = vo2max_from_features(fv, spec.beta, spec.interaction)
    if not VO2_RANGE[0] < base < VO2_RANGE[1]:
        raise InfeasibleSpec(f"{pid}: noiseless VO2max {base:.2f} outside {VO2_RANGE}; adjust beta")
    vo2 = base
    if spec.sigma > 0:
        # noise is redrawn on the rare occasions it leaves the valid range
        for _ in range(1000):
            vo2 = base + float(rng.normal(0.0, spec.sigma))
            if VO2_RANGE[0] < vo2 < VO2_RANGE[1]:
                break
        else:
            raise InfeasibleSpec(f"{pid}: sigma {spec.sigma} too large for VO2max range {VO2_RANGE}")
    p = Participant(pid, gender, age, height, weight, cpet_max, vo2)
    fv = build_feature_vector(p, outcome, cpsjt)
    return SyntheticParticipant(p, physio, cpet, cpsjt, outcome, fv, capacity)


def generate_cohort(spec: CohortSpec | None = None, seed: int = 0, cfg: CpsjtConfig | None = None,
                    threads: int = 1) -> Cohort:
    """Draw participants cell by cell and run both sessions for each.

    Participant ``i`` uses child streams of ``seed`` keyed by ``i`` only, so
    the result does not depend on ``threads``.
    """
    spec = spec or CohortSpec()
    cfg = cfg or CpsjtConfig()
    jobs = [(g, b) for g, b, count in spec.cells for _ in range(count)]
    make = lambda ib: _make_participant(spec, cfg, seed, ib[0], *ib[1])
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            members = list(pool.map(make, enumerate(jobs)))
    else:
        members = [make(ib) for ib in enumerate(jobs)]
    return Cohort(spec, seed, tuple(members))


def write_cohort(cohort: Cohort, out_dir) -> Path:
    """Write manifest.json, recordings/*.csv and ground_truth.json; returns the manifest path."""
    out = Path(out_dir)
    (out / "recordings").mkdir(parents=True, exist_ok=True)
    manifest = cohort.manifest(out)
    for m, e in zip(cohort.members, manifest.entries):
        write_recording(m.cpet, out / e.cpet_file)
        write_recording(m.cpsjt, out / e.cpsjt_file)
    write_manifest(manifest, out / "manifest.json")
    write_json(out / "ground_truth.json", cohort.ground_truth())
    write_json(out / "cohort_spec.json", cohort.spec.to_dict())
    return out / "manifest.json"
