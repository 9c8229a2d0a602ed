"""Readers and validators for the patient event file and the treatment catalog.

events.csv   patient_id,date,kind,code,days_supply,quantity
catalog.csv  generic_name,medication_class,kegg_code,smiles
patients.csv patient_id,birth_date,gender
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

EVENT_COLUMNS = ["patient_id", "date", "kind", "code", "days_supply", "quantity"]
CATALOG_COLUMNS = ["generic_name", "medication_class", "kegg_code", "smiles"]
PATIENT_COLUMNS = ["patient_id", "birth_date", "gender"]

KEGG_DRUG_RE = re.compile(r"^D\d{5}$")


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class EventKind(str, enum.Enum):
    DIAGNOSIS = "diagnosis"
    PRESCRIPTION = "prescription"
    PROCEDURE = "procedure"


@dataclass(frozen=True)
class EventRecord:
    patient_id: str
    date: dt.date
    kind: EventKind
    code: str
    days_supply: int = 0
    quantity: float = 0.0

    def __post_init__(self):
        if self.days_supply < 0:
            raise ValueError("days_supply must be nonnegative")
        if self.quantity < 0:
            raise ValueError("quantity must be nonnegative")
        if self.kind is not EventKind.PRESCRIPTION and self.days_supply != 0:
            raise ValueError("days_supply must be 0 for non-prescription events")


@dataclass(frozen=True)
class TreatmentCatalogEntry:
    generic_name: str
    medication_class: str
    kegg_code: str | None = None
    smiles: str | None = None


@dataclass(frozen=True)
class Demographics:
    patient_id: str
    birth_date: dt.date
    gender: str  # "F", "M" or "U"


@dataclass
class ValidationReport:
    n_events: int = 0
    n_patients: int = 0
    kind_counts: dict[str, int] = field(default_factory=dict)
    first_date: dt.date | None = None
    last_date: dt.date | None = None
    violations: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def to_dict(self) -> dict:
        return {
            "n_events": self.n_events,
            "n_patients": self.n_patients,
            "kind_counts": dict(self.kind_counts),
            "first_date": self.first_date.isoformat() if self.first_date else None,
            "last_date": self.last_date.isoformat() if self.last_date else None,
            "violations": dict(self.violations),
        }


def _read_rows(path, required: Sequence[str]):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty, expected a header row", 1, str(path)) from None
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"missing column(s): {', '.join(missing)}", 1, str(path))
        pos = {c: header.index(c) for c in required}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno, str(path))
            yield lineno, {c: row[i] for c, i in pos.items()}


def _parse_date(text: str, lineno: int, path: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"invalid date {text!r}", lineno, path) from None


def parse_events(path) -> list[EventRecord]:
    """Read events.csv, sorted by (patient_id, date) with file order breaking ties."""
    out = []
    for lineno, row in _read_rows(path, EVENT_COLUMNS):
        date = _parse_date(row["date"], lineno, str(path))
        try:
            kind = EventKind(row["kind"].strip())
        except ValueError:
            raise ParseError(f"unknown event kind {row['kind']!r}", lineno, str(path)) from None
        try:
            days_supply = int(row["days_supply"] or 0)
            quantity = float(row["quantity"] or 0)
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", lineno, str(path)) from None
        if days_supply < 0:
            raise ParseError(f"negative days_supply {days_supply}", lineno, str(path))
        if quantity < 0:
            raise ParseError(f"negative quantity {quantity}", lineno, str(path))
        try:
            ev = EventRecord(row["patient_id"].strip(), date, kind, row["code"].strip(),
                             days_supply, quantity)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, str(path)) from None
        out.append((ev.patient_id, ev.date, lineno, ev))
    out.sort(key=lambda t: t[:3])
    return [t[3] for t in out]


def _format_quantity(q: float) -> str:
    return repr(float(q))


def write_events(events: Iterable[EventRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for ev in events:
            w.writerow([ev.patient_id, ev.date.isoformat(), ev.kind.value, ev.code,
                        ev.days_supply, _format_quantity(ev.quantity)])


def events_to_csv(events: Iterable[EventRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for ev in events:
        w.writerow([ev.patient_id, ev.date.isoformat(), ev.kind.value, ev.code,
                    ev.days_supply, _format_quantity(ev.quantity)])
    return buf.getvalue()


def _optional(cell: str | None) -> str | None:
    if cell is None:
        return None
    cell = cell.strip()
    if not cell or cell.lower() == "nan":
        return None
    return cell


def parse_treatment_catalog(path) -> list[TreatmentCatalogEntry]:
    entries = []
    seen: dict[str, int] = {}
    for lineno, row in _read_rows(path, CATALOG_COLUMNS):
        name = row["generic_name"].strip()
        if not name:
            raise ParseError("empty generic_name", lineno, str(path))
        if name in seen:
            raise ParseError(f"duplicate generic_name {name!r} (first seen on line {seen[name]})",
                             lineno, str(path))
        seen[name] = lineno
        kegg = _optional(row["kegg_code"])
        if kegg is not None and not KEGG_DRUG_RE.match(kegg):
            raise ParseError(f"kegg_code {kegg!r} is not a D-number", lineno, str(path))
        entries.append(TreatmentCatalogEntry(name, row["medication_class"].strip(), kegg,
                                             _optional(row["smiles"])))
    return entries


def write_treatment_catalog(entries: Iterable[TreatmentCatalogEntry], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_COLUMNS)
        for e in entries:
            w.writerow([e.generic_name, e.medication_class, e.kegg_code or "", e.smiles or ""])


def parse_demographics(path) -> dict[str, Demographics]:
    out = {}
    for lineno, row in _read_rows(path, PATIENT_COLUMNS):
        pid = row["patient_id"].strip()
        gender = row["gender"].strip().upper()[:1] or "U"
        if gender not in ("F", "M"):
            gender = "U"
        out[pid] = Demographics(pid, _parse_date(row["birth_date"], lineno, str(path)), gender)
    return out


def write_demographics(people: Iterable[Demographics], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATIENT_COLUMNS)
        for p in people:
            w.writerow([p.patient_id, p.birth_date.isoformat(), p.gender])


def validate_events(events: Sequence[EventRecord]) -> ValidationReport:
    """Summary counts plus per-check violation counts; never raises."""
    report = ValidationReport()
    report.violations = {
        "prescription_zero_supply": 0,
        "empty_code": 0,
        "unsorted": 0,
    }
    if not events:
        return report
    kinds = Counter(ev.kind.value for ev in events)
    report.n_events = len(events)
    report.n_patients = len({ev.patient_id for ev in events})
    report.kind_counts = dict(sorted(kinds.items()))
    report.first_date = min(ev.date for ev in events)
    report.last_date = max(ev.date for ev in events)
    prev = None
    for ev in events:
        if ev.kind is EventKind.PRESCRIPTION and ev.days_supply == 0:
            report.violations["prescription_zero_supply"] += 1
        if not ev.code:
            report.violations["empty_code"] += 1
        key = (ev.patient_id, ev.date)
        if prev is not None and key < prev:
            report.violations["unsorted"] += 1
        prev = key
    return report
