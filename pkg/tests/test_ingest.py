import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vo2kit.core import AccelStream, HrStream, Participant, SessionRecording, ValidationError
from vo2kit.features import FeatureVector
from vo2kit.ingest import (
    FEATURE_HEADER,
    CohortEntry,
    CohortManifest,
    ParseError,
    read_feature_table,
    read_manifest,
    read_recording,
    round_features,
    write_feature_table,
    write_manifest,
    write_recording,
)


def write(path, text):
    path.write_text(text)
    return path


def test_three_row_hr_file(tmp_path):
    f = write(tmp_path / "hr.csv", "t_ms,hr_bpm\n0,80\n1000,81.5\n2000,83\n")
    rec = read_recording(f, "cpet")
    assert len(rec.hr) == 3 and len(rec.accel) == 0
    assert rec.hr.samples()[1] == (1000, 81.5)


def test_malformed_row_reports_line(tmp_path):
    f = write(tmp_path / "hr.csv", "t_ms,hr_bpm\nabc,150\n")
    with pytest.raises(ParseError) as exc:
        read_recording(f, "cpet")
    assert exc.value.line == 2


def test_out_of_order_timestamps(tmp_path):
    f = write(tmp_path / "hr.csv", "t_ms,hr_bpm\n0,80\n2000,81\n1000,82\n")
    with pytest.raises(ValidationError, match="strictly increasing t"):
        read_recording(f, "cpet")


def test_combined_file_with_empty_cells(tmp_path):
    f = write(tmp_path / "s.csv", "t_ms,hr_bpm,ax_g,ay_g,az_g\n0,90,0,0,1\n100,,0.1,0,1\n1000,91,,,\n")
    rec = read_recording(f, "cpsjt", recovery_start=500)
    assert len(rec.hr) == 2 and len(rec.accel) == 2
    assert rec.recovery_start == 500


def test_partial_accel_row_rejected(tmp_path):
    f = write(tmp_path / "s.csv", "t_ms,hr_bpm,ax_g,ay_g,az_g\n0,90,0,,1\n")
    with pytest.raises(ParseError):
        read_recording(f, "cpsjt")


def test_separate_accel_file(tmp_path):
    hr = write(tmp_path / "hr.csv", "t_ms,hr_bpm\n0,80\n1000,81\n")
    acc = write(tmp_path / "acc.csv", "t_ms,ax_g,ay_g,az_g\n0,0,0,1\n500,0,0.2,1\n")
    rec = read_recording(hr, "cpsjt", accel_path=acc)
    assert rec.accel.xyz[1, 1] == 0.2


def test_parsing_ignores_locale_style_commas(tmp_path):
    # a decimal comma becomes an extra field, never a number
    f = write(tmp_path / "hr.csv", "t_ms,hr_bpm\n0,80,5\n")
    with pytest.raises(ParseError):
        read_recording(f, "cpet")


def _finite(lo, hi):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


@given(st.lists(_finite(25, 250), min_size=1, max_size=20),
       st.lists(st.tuples(_finite(-16, 16), _finite(-16, 16), _finite(-16, 16)), max_size=20))
def test_recording_round_trip(tmp_path_factory, hr, acc):
    d = tmp_path_factory.mktemp("rt")
    hr = np.round(hr, 6)
    acc = np.round(np.array(acc, float).reshape(-1, 3), 6)
    rec = SessionRecording("P", "cpsjt", HrStream(np.arange(len(hr)) * 1000, hr),
                           AccelStream(np.arange(len(acc)) * 250, acc) if len(acc) else AccelStream.empty())
    write_recording(rec, d / "r.csv")
    back = read_recording(d / "r.csv", "cpsjt", "P")
    assert back == rec


def manifest_dir(tmp_path, participants):
    (tmp_path / "r").mkdir(exist_ok=True)
    for p in participants:
        for key in ("cpet_file", "cpsjt_file"):
            if p.get(key) and not p.get("_skip") == key:
                write(tmp_path / p[key], "t_ms,hr_bpm\n0,80\n1000,90\n")
        p.pop("_skip", None)
    f = tmp_path / "manifest.json"
    f.write_text(json.dumps({"participants": participants}))
    return f


def entry(pid, **kw):
    return {"id": pid, "gender": "male", "age": 30, "height_m": 1.8, "weight_kg": 75.0,
            "cpet_max_hr": 190.0, "cpet_vo2max": 45.0, "cpet_file": f"r/{pid}_cpet.csv",
            "cpsjt_file": f"r/{pid}_cpsjt.csv", **kw}


def test_manifest_of_two(tmp_path):
    m = read_manifest(manifest_dir(tmp_path, [entry("P01"), entry("P02", gender="female")]))
    assert len(m) == 2
    assert m.participants[1].gender.value == "female"
    assert len(m.load_cpsjt(m.entries[0]).hr) == 2


def test_manifest_duplicate_id(tmp_path):
    with pytest.raises(ValidationError, match="P01"):
        read_manifest(manifest_dir(tmp_path, [entry("P01"), entry("P01")]))


def test_manifest_missing_file_names_participant_and_field(tmp_path):
    f = manifest_dir(tmp_path, [entry("P01"), entry("P02", _skip="cpsjt_file")])
    with pytest.raises(ValidationError) as exc:
        read_manifest(f)
    assert "P02" in str(exc.value) and "cpsjt_file" in str(exc.value)


def test_manifest_schema_mismatch(tmp_path):
    f = write(tmp_path / "m.json", json.dumps({"people": []}))
    with pytest.raises(ValidationError, match="schema"):
        read_manifest(f)
    f = write(tmp_path / "m2.json", json.dumps({"participants": [{"id": "X"}]}))
    with pytest.raises(ValidationError, match="missing field"):
        read_manifest(f)


def test_manifest_recovery_marker_alias(tmp_path):
    m = read_manifest(manifest_dir(tmp_path, [entry("P01", recovery_start_ms=500)]))
    assert m.entries[0].cpsjt_recovery_start_ms == 500


def test_manifest_round_trip(tmp_path):
    f = manifest_dir(tmp_path, [entry("P01", cpsjt_recovery_start_ms=1000), entry("P02", cpet_vo2max=None)])
    m = read_manifest(f)
    write_manifest(m, tmp_path / "copy.json")
    assert read_manifest(tmp_path / "copy.json").entries == m.entries


def fv(i=0, **kw):
    base = dict(id=f"P{i}", gender_code=1, bmi=22.5, aerobic_s=200.0, anaerobic_s=100.0,
                endured_raw_s=300.0, endured_interp_s=300.0, hrr30=20.0, hrr60=None, hrr120=41.25,
                vo2max=44.0)
    return FeatureVector(**{**base, **kw})


def test_feature_table_one_row(tmp_path):
    write_feature_table([fv()], tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == ",".join(FEATURE_HEADER)
    assert read_feature_table(tmp_path / "f.csv") == [fv()]


def test_feature_table_empty(tmp_path):
    with pytest.raises(ValidationError, match="empty table"):
        write_feature_table([], tmp_path / "f.csv")


def test_feature_table_unwritable(tmp_path):
    blocker = write(tmp_path / "plain_file", "x")
    with pytest.raises(ValidationError):
        write_feature_table([fv()], blocker / "f.csv")


@given(st.lists(st.tuples(_finite(10, 60), _finite(0, 700), _finite(0, 700),
                          st.one_of(st.none(), _finite(-20, 80)), _finite(10.5, 94)), min_size=1, max_size=8))
def test_feature_table_round_trip(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("ft")
    vecs = [fv(i, bmi=b, aerobic_s=a, anaerobic_s=an, endured_raw_s=a + an, endured_interp_s=a + an,
               hrr30=h, vo2max=v) for i, (b, a, an, h, v) in enumerate(rows)]
    write_feature_table(vecs, d / "f.csv")
    back = read_feature_table(d / "f.csv")
    assert back == [round_features(v) for v in vecs]
    # a second pass is exact
    write_feature_table(back, d / "g.csv")
    assert read_feature_table(d / "g.csv") == back
