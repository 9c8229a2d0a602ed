"""Patient covariates at the index date of a treatment block."""
from __future__ import annotations

import datetime as dt
import json
import re
from bisect import bisect_left
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .cohort import TreatmentBlock, compute_target, steroid_events_by_patient
from .ingest import Demographics, EventRecord

DAYS_PER_MONTH = 30
BASE_COLUMNS = ["age", "gender"]
MASTER_ID_COLUMNS = ["patient_id", "treatment", "block_start", "block_end", "target"]

_LAST_K = re.compile(r"^last_(\d+)_months?$")


class FeatureSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    kind: str  # "at_index" | "last_k_months" | "lifetime"
    months: int = 0

    def __post_init__(self):
        if self.kind not in ("at_index", "last_k_months", "lifetime"):
            raise FeatureSpecError(f"unknown window {self.kind!r}")
        if self.kind == "last_k_months" and self.months < 1:
            raise FeatureSpecError("last_k_months needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> "Window":
        text = text.strip()
        if text in ("at_index", "lifetime"):
            return cls(text)
        m = _LAST_K.match(text)
        if not m:
            raise FeatureSpecError(f"cannot parse window {text!r}")
        return cls("last_k_months", int(m.group(1)))

    def __str__(self):
        return f"last_{self.months}_months" if self.kind == "last_k_months" else self.kind

    def earliest(self, as_of: dt.date) -> dt.date | None:
        """First day inside the window; events must also fall strictly before as_of."""
        if self.kind == "lifetime":
            return None
        if self.kind == "at_index":
            return as_of - dt.timedelta(days=1)
        return as_of - dt.timedelta(days=self.months * DAYS_PER_MONTH)


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # "binary_presence" | "count"
    code_set: frozenset
    window: Window

    def __post_init__(self):
        if self.kind not in ("binary_presence", "count"):
            raise FeatureSpecError(f"{self.name}: unknown kind {self.kind!r}")
        if not self.code_set:
            raise FeatureSpecError(f"{self.name}: empty code set")

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureSpec":
        try:
            return cls(data["name"], data["kind"], frozenset(data["codes"]),
                       Window.parse(data["window"]))
        except KeyError as exc:
            raise FeatureSpecError(f"feature spec missing key {exc}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "codes": sorted(self.code_set),
                "window": str(self.window)}


def load_feature_specs(path) -> list[FeatureSpec]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["features"]
    specs = [FeatureSpec.from_dict(d) for d in data]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise FeatureSpecError("duplicate feature names")
    clash = set(names) & set(BASE_COLUMNS + MASTER_ID_COLUMNS)
    if clash:
        raise FeatureSpecError(f"reserved feature name(s): {sorted(clash)}")
    return specs


@dataclass(frozen=True)
class MasterRow:
    patient_id: str
    treatment: str
    covariates: tuple[float, ...]
    target: float
    block_start: dt.date | None = None
    block_end: dt.date | None = None


class PatientHistory:
    """Per-patient event lists indexed by code, sorted by date."""

    def __init__(self, events: Iterable[EventRecord]):
        self._dates: dict[tuple[str, str], list[dt.date]] = defaultdict(list)
        for ev in events:
            self._dates[(ev.patient_id, ev.code)].append(ev.date)
        for dates in self._dates.values():
            dates.sort()

    def count(self, patient_id: str, codes: Iterable[str], start: dt.date | None,
              as_of: dt.date) -> int:
        total = 0
        for code in codes:
            dates = self._dates.get((patient_id, code))
            if not dates:
                continue
            hi = bisect_left(dates, as_of)
            lo = 0 if start is None else bisect_left(dates, start)
            total += max(0, hi - lo)
        return total


def lookback_aggregate(events, patient_id: str, spec: FeatureSpec, as_of: dt.date) -> float:
    """Binary presence or count of matching events strictly before ``as_of``.

    ``last_k_months`` keeps events at most ``k*30`` days before ``as_of``;
    ``at_index`` keeps only the day before it. ``events`` may be a plain
    event sequence or a prebuilt ``PatientHistory``.
    """
    history = events if isinstance(events, PatientHistory) else PatientHistory(
        ev for ev in events if ev.patient_id == patient_id)
    n = history.count(patient_id, spec.code_set, spec.window.earliest(as_of), as_of)
    if spec.kind == "binary_presence":
        return 1.0 if n > 0 else 0.0
    return float(n)


def age_at(birth: dt.date, day: dt.date) -> int:
    return day.year - birth.year - ((day.month, day.day) < (birth.month, birth.day))


def gender_indicator(gender: str) -> float:
    return {"F": 1.0, "M": 0.0}.get(gender, 0.5)


def covariate_names(specs: Sequence[FeatureSpec]) -> list[str]:
    return BASE_COLUMNS + [s.name for s in specs]


def assemble_covariates(block: TreatmentBlock, events, specs: Sequence[FeatureSpec],
                        demographics: Mapping[str, Demographics]) -> dict[str, float]:
    """Named covariates ``age, gender, <spec names...>`` at the block's index date."""
    person = demographics.get(block.patient_id)
    if person is None:
        raise KeyError(f"no demographics for patient {block.patient_id!r}")
    out = {
        "age": float(age_at(person.birth_date, block.start)),
        "gender": gender_indicator(person.gender),
    }
    for spec in specs:
        out[spec.name] = lookback_aggregate(events, block.patient_id, spec, block.start)
    return out


def build_master_table(blocks: Sequence[TreatmentBlock], events: Sequence[EventRecord],
                       specs: Sequence[FeatureSpec], demographics: Mapping[str, Demographics],
                       steroid_codes: Iterable[str]) -> list[MasterRow]:
    """One row per non-degenerate block; degenerate blocks are dropped."""
    history = PatientHistory(events)
    steroids = steroid_events_by_patient(events, steroid_codes)
    names = covariate_names(specs)
    rows = []
    for block in blocks:
        target = compute_target(block, steroids.get(block.patient_id, ()))
        if target is None:
            continue
        cov = assemble_covariates(block, history, specs, demographics)
        rows.append(MasterRow(block.patient_id, block.treatment,
                              tuple(cov[n] for n in names), target,
                              block.start, block.end))
    return rows


def master_frame(rows: Sequence[MasterRow], names: Sequence[str]) -> pd.DataFrame:
    data = {
        "patient_id": [r.patient_id for r in rows],
        "treatment": [r.treatment for r in rows],
        "block_start": [r.block_start.isoformat() if r.block_start else "" for r in rows],
        "block_end": [r.block_end.isoformat() if r.block_end else "" for r in rows],
        "target": np.array([r.target for r in rows], dtype=float),
    }
    cov = np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), len(names))
    for j, name in enumerate(names):
        data[name] = cov[:, j]
    return pd.DataFrame(data)


def write_master_table(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def read_master_table(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"patient_id": str, "treatment": str,
                                     "block_start": str, "block_end": str})
    missing = [c for c in MASTER_ID_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"master table missing column(s): {missing}")
    return frame


def covariate_columns(frame: pd.DataFrame) -> list[str]:
    return [c for c in frame.columns if c not in MASTER_ID_COLUMNS]
