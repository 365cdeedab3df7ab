"""Reading and writing on-disk artifacts.

Streams are CSV files, manifests and reports are JSON. Numbers in CSV
output are written with six decimals; parsing never depends on locale.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    AccelStream,
    HrStream,
    Participant,
    SessionKind,
    SessionRecording,
    ValidationError,
    validate_recording,
)
from .features import FeatureVector

HR_HEADER = ["t_ms", "hr_bpm"]
ACCEL_HEADER = ["t_ms", "ax_g", "ay_g", "az_g"]
SESSION_HEADER = ["t_ms", "hr_bpm", "ax_g", "ay_g", "az_g"]
FEATURE_HEADER = ["id", "gender", "bmi", "aerobic_s", "anaerobic_s", "endured_raw_s",
                  "endured_interp_s", "hrr30", "hrr60", "hrr120", "vo2max"]
MANIFEST_KEYS = ("id", "gender", "age", "height_m", "weight_kg", "cpet_max_hr", "cpet_vo2max",
                 "cpet_file", "cpsjt_file")


class ParseError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


def fmt(x: float) -> str:
    return f"{x:.6f}"


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- streams ----------------------------------------------------------------


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ValidationError(f"missing file: {path}", field=str(path)) from None
    if not rows:
        raise ParseError("empty file", path)
    return [c.strip() for c in rows[0]], rows[1:]


def _num(cell: str, path, line: int, kind=float):
    try:
        v = kind(cell)
    except ValueError:
        raise ParseError(f"cannot parse {cell!r} as a number", path, line) from None
    if kind is float and not math.isfinite(v):
        raise ParseError(f"non-finite value {cell!r}", path, line)
    return v


def _parse_stream_file(path):
    header, rows = _read_rows(path)
    if header not in (HR_HEADER, ACCEL_HEADER, SESSION_HEADER):
        raise ParseError(f"unrecognised header {','.join(header)}", path, 1)
    hr_t, hr, acc_t, acc = [], [], [], []
    has_hr = "hr_bpm" in header
    has_acc = "ax_g" in header
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
        cells = dict(zip(header, (c.strip() for c in row)))
        t = _num(cells["t_ms"], path, lineno, int)
        got = False
        if has_hr and cells["hr_bpm"]:
            hr_t.append(t)
            hr.append(_num(cells["hr_bpm"], path, lineno))
            got = True
        if has_acc:
            axes = [cells[k] for k in ACCEL_HEADER[1:]]
            if all(axes):
                acc_t.append(t)
                acc.append([_num(a, path, lineno) for a in axes])
                got = True
            elif any(axes):
                raise ParseError("partially empty acceleration cells", path, lineno)
        if not got:
            raise ParseError("row carries no samples", path, lineno)
    return (hr_t, hr), (acc_t, acc)


def read_recording(path, kind: SessionKind | str, participant_id: str = "",
                   recovery_start: Optional[int] = None, accel_path=None) -> SessionRecording:
    """Parse a stream CSV (optionally plus a separate accel CSV) and validate it."""
    (hr_t, hr), (acc_t, acc) = _parse_stream_file(path)
    if accel_path is not None:
        _, (acc_t2, acc2) = _parse_stream_file(accel_path)
        acc_t, acc = acc_t + acc_t2, acc + acc2
    accel = AccelStream(acc_t, acc) if acc_t else AccelStream.empty()
    rec = SessionRecording(participant_id or Path(path).stem, SessionKind(kind),
                           HrStream(hr_t, hr), accel, recovery_start)
    violations = validate_recording(rec)
    if violations:
        rules = sorted({v.rule for v in violations})
        first = violations[0]
        raise ValidationError(
            f"{path}: {len(violations)} violation(s): {', '.join(rules)} "
            f"(first: {first.stream}[{first.index}] {first.rule})",
            violations=violations,
        )
    return rec


def write_recording(rec: SessionRecording, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if len(rec.accel) == 0:
        w.writerow(HR_HEADER)
        for t, h in zip(rec.hr.t_ms, rec.hr.bpm):
            w.writerow([int(t), fmt(h)])
    else:
        w.writerow(SESSION_HEADER)
        hr = dict(zip(rec.hr.t_ms.tolist(), rec.hr.bpm.tolist()))
        acc = dict(zip(rec.accel.t_ms.tolist(), rec.accel.xyz.tolist()))
        for t in sorted(set(hr) | set(acc)):
            h = fmt(hr[t]) if t in hr else ""
            a = [fmt(v) for v in acc[t]] if t in acc else ["", "", ""]
            w.writerow([t, h, *a])
    atomic_write_text(path, buf.getvalue())


# -- manifests --------------------------------------------------------------


@dataclass(frozen=True)
class CohortEntry:
    participant: Participant
    cpet_file: str
    cpsjt_file: str
    cpet_recovery_start_ms: Optional[int] = None
    cpsjt_recovery_start_ms: Optional[int] = None


@dataclass(frozen=True)
class CohortManifest:
    entries: tuple
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    @property
    def participants(self) -> list[Participant]:
        return [e.participant for e in self.entries]

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def load_cpsjt(self, entry: CohortEntry) -> SessionRecording:
        return read_recording(self.resolve(entry.cpsjt_file), SessionKind.CPSJT,
                              entry.participant.id, entry.cpsjt_recovery_start_ms)

    def load_cpet(self, entry: CohortEntry) -> SessionRecording:
        return read_recording(self.resolve(entry.cpet_file), SessionKind.CPET,
                              entry.participant.id, entry.cpet_recovery_start_ms)


def _entry_from_json(obj: dict, index: int) -> CohortEntry:
    if not isinstance(obj, dict):
        raise ValidationError(f"participants[{index}] is not an object")
    missing = [k for k in MANIFEST_KEYS if k not in obj and k != "cpet_vo2max"]
    pid = obj.get("id", f"#{index}")
    if missing:
        raise ValidationError(f"participant {pid}: missing field(s) {', '.join(missing)}",
                              field=missing[0])
    try:
        p = Participant(
            id=str(obj["id"]), gender=obj["gender"], age=obj["age"],
            height=float(obj["height_m"]), weight=float(obj["weight_kg"]),
            cpet_max_hr=float(obj["cpet_max_hr"]),
            cpet_vo2max=None if obj.get("cpet_vo2max") is None else float(obj["cpet_vo2max"]),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"participant {pid}: {exc}") from None
    # a bare recovery_start_ms refers to the CPSJT session
    cpsjt_mark = obj.get("cpsjt_recovery_start_ms", obj.get("recovery_start_ms"))
    return CohortEntry(p, str(obj["cpet_file"]), str(obj["cpsjt_file"]),
                       obj.get("cpet_recovery_start_ms"), cpsjt_mark)


def read_manifest(path) -> CohortManifest:
    path = Path(path)
    try:
        data = read_json(path)
    except FileNotFoundError:
        raise ValidationError(f"missing file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(data, dict) or not isinstance(data.get("participants"), list):
        raise ValidationError(f"{path}: schema mismatch, expected an object with a 'participants' list")
    entries = [_entry_from_json(obj, i) for i, obj in enumerate(data["participants"])]
    seen = set()
    for e in entries:
        if e.participant.id in seen:
            raise ValidationError(f"duplicate participant id {e.participant.id}", field="id")
        seen.add(e.participant.id)
    root = path.parent
    for e in entries:
        for fld in ("cpet_file", "cpsjt_file"):
            target = root / getattr(e, fld)
            if not target.is_file():
                raise ValidationError(
                    f"participant {e.participant.id}: {fld} not found: {target}", field=fld)
    return CohortManifest(tuple(entries), root)


def manifest_to_json(manifest: CohortManifest) -> dict:
    out = []
    for e in manifest.entries:
        p = e.participant
        row = {"id": p.id, "gender": p.gender.value, "age": p.age, "height_m": p.height,
               "weight_kg": p.weight, "cpet_max_hr": p.cpet_max_hr, "cpet_vo2max": p.cpet_vo2max,
               "cpet_file": e.cpet_file, "cpsjt_file": e.cpsjt_file}
        if e.cpet_recovery_start_ms is not None:
            row["cpet_recovery_start_ms"] = e.cpet_recovery_start_ms
        if e.cpsjt_recovery_start_ms is not None:
            row["cpsjt_recovery_start_ms"] = e.cpsjt_recovery_start_ms
        out.append(row)
    return {"participants": out}


def write_manifest(manifest: CohortManifest, path) -> None:
    write_json(path, manifest_to_json(manifest))


# -- feature tables ---------------------------------------------------------


def _opt(v) -> str:
    return "" if v is None else fmt(v)


def write_feature_table(rows: Sequence[FeatureVector], path) -> None:
    rows = list(rows)
    if not rows:
        raise ValidationError("empty table")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_HEADER)
    for r in rows:
        w.writerow([r.id, r.gender_code, fmt(r.bmi), fmt(r.aerobic_s), fmt(r.anaerobic_s),
                    fmt(r.endured_raw_s), fmt(r.endured_interp_s), _opt(r.hrr30), _opt(r.hrr60),
                    _opt(r.hrr120), _opt(r.vo2max)])
    try:
        atomic_write_text(path, buf.getvalue())
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc.strerror}") from None


def read_feature_table(path) -> list[FeatureVector]:
    header, rows = _read_rows(path)
    if header != FEATURE_HEADER:
        raise ParseError(f"unexpected header {','.join(header)}", path, 1)
    out = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
        c = dict(zip(header, row))

        def opt(key):
            return None if c[key] == "" else _num(c[key], path, lineno)

        out.append(FeatureVector(
            id=c["id"], gender_code=_num(c["gender"], path, lineno, int),
            bmi=_num(c["bmi"], path, lineno), aerobic_s=_num(c["aerobic_s"], path, lineno),
            anaerobic_s=_num(c["anaerobic_s"], path, lineno),
            endured_raw_s=_num(c["endured_raw_s"], path, lineno),
            endured_interp_s=_num(c["endured_interp_s"], path, lineno),
            hrr30=opt("hrr30"), hrr60=opt("hrr60"), hrr120=opt("hrr120"), vo2max=opt("vo2max"),
        ))
    if not out:
        raise ValidationError(f"{path}: empty table")
    return out


def round_features(fv: FeatureVector) -> FeatureVector:
    """The values a feature table round-trip yields."""
    def r(v):
        return None if v is None else float(fmt(v))
    return FeatureVector(fv.id, fv.gender_code, r(fv.bmi), r(fv.aerobic_s), r(fv.anaerobic_s),
                         r(fv.endured_raw_s), r(fv.endured_interp_s), r(fv.hrr30), r(fv.hrr60),
                         r(fv.hrr120), r(fv.vo2max))
