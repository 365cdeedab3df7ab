import numpy as np
import pytest
from hypothesis import given, strategies as st

from vo2kit.core import (
    AccelStream,
    Gender,
    HrStream,
    Participant,
    SessionRecording,
    ValidationError,
    compute_bmi,
    theoretical_max_hr,
    validate_recording,
)


def recording(t, hr, accel_t=(), accel=(), recovery_start=None):
    acc = AccelStream(list(accel_t), list(accel)) if len(accel_t) else AccelStream.empty()
    return SessionRecording("P", "cpsjt", HrStream(t, hr), acc, recovery_start)


@pytest.mark.parametrize("w,h,expected", [(62.5, 1.60, 24.41), (50, 1.00, 50.0), (88, 1.65, 32.32)])
def test_bmi_examples(w, h, expected):
    assert compute_bmi(w, h) == pytest.approx(expected, abs=5e-3)


@pytest.mark.parametrize("w,h,name", [(20, 1.7, "weight"), (70, 0.5, "height"), (70, 3.0, "height")])
def test_bmi_out_of_range_names_field(w, h, name):
    with pytest.raises(ValidationError) as exc:
        compute_bmi(w, h)
    assert exc.value.field == name


@given(st.floats(50, 120), st.floats(1.2, 2.2), st.floats(0.5, 2.0))
def test_bmi_scales_with_weight(w, h, k):
    assert compute_bmi(k * w, h) == pytest.approx(k * compute_bmi(w, h), rel=1e-12)


def test_theoretical_max_hr():
    assert theoretical_max_hr(20) == 200
    assert theoretical_max_hr(45) == 175
    with pytest.raises(ValidationError):
        theoretical_max_hr(95)


@given(st.integers(10, 90))
def test_theoretical_max_round_trip(age):
    assert 220 - theoretical_max_hr(age) == age


def test_participant_bounds():
    p = Participant("A", "female", 25, 1.6, 60.0, 185.0, 40.0)
    assert p.gender is Gender.FEMALE and p.gender.code == 0
    assert Gender.MALE.code == 1
    for kw in ({"age": 17}, {"age": 20.5}, {"height": 1.0}, {"weight": 250.0},
               {"cpet_max_hr": 230.0}, {"cpet_vo2max": 95.0}, {"id": ""}):
        args = {"id": "A", "gender": "female", "age": 25, "height": 1.6, "weight": 60.0,
                "cpet_max_hr": 185.0, "cpet_vo2max": 40.0, **kw}
        with pytest.raises(ValidationError):
            Participant(**args)


def test_well_formed_recording_has_no_violations():
    rec = recording([0, 1000, 2000], [80, 90, 100], [0, 20], [(0, 0, 1), (0.1, 0, 1)], 1500)
    assert validate_recording(rec) == []


def test_hr_out_of_range_reported_at_index():
    hr = [100] * 8
    hr[5] = 300
    v = validate_recording(recording(list(range(0, 8000, 1000)), hr))
    assert [(x.index, x.rule) for x in v] == [(5, "hr range")]


def test_duplicate_timestamp_reported():
    v = validate_recording(recording([0, 10, 10], [100, 100, 100]))
    assert [(x.index, x.rule) for x in v] == [(2, "strictly increasing t")]


def test_recovery_marker_outside_span():
    v = validate_recording(recording([0, 1000], [100, 100], recovery_start=5000))
    assert [x.rule for x in v] == ["recovery_start within span"]


def test_streams_are_immutable():
    s = HrStream([0, 1000], [80.0, 81.0])
    with pytest.raises(ValueError):
        s.bpm[0] = 1.0


@st.composite
def corrupted(draw):
    n = draw(st.integers(2, 30))
    t = np.cumsum(draw(st.lists(st.integers(1, 2000), min_size=n, max_size=n)))
    hr = np.array(draw(st.lists(st.floats(25, 250), min_size=n, max_size=n)))
    m = draw(st.integers(0, 10))
    acc = np.array(draw(st.lists(st.tuples(*[st.floats(-16, 16)] * 3), min_size=m, max_size=m))).reshape(-1, 3)
    at = np.arange(m) * 50
    kind = draw(st.sampled_from(["none", "hr", "dup", "neg", "accel"]))
    if kind == "hr":
        hr[draw(st.integers(0, n - 1))] = draw(st.sampled_from([24.9, 250.5, 1e4, -3.0]))
    elif kind == "dup":
        i = draw(st.integers(1, n - 1))
        t[i] = t[i - 1]
    elif kind == "neg":
        t = t - t[-1] - 1
    elif kind == "accel" and m:
        acc[draw(st.integers(0, m - 1)), draw(st.integers(0, 2))] = draw(st.sampled_from([16.5, -20.0]))
    elif kind == "accel":
        kind = "none"
    return recording(t, hr, at, acc), kind


@given(corrupted())
def test_violations_iff_corrupted(case):
    rec, kind = case
    v = validate_recording(rec)
    assert (v == []) == (kind == "none")
    if kind == "hr":
        assert {x.rule for x in v} == {"hr range"}
    if kind == "dup":
        assert {x.rule for x in v} == {"strictly increasing t"}
