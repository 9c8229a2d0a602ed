"""Treatment blocks and the steroid-burden target.

A block chains one patient's prescriptions of one treatment while the gap
between the running coverage end and the next fill stays within the washout.
The target is the fraction of target-window days covered by any steroid
supply, where the target window is ``(onset_end, end]`` in day units.
"""
from __future__ import annotations

import datetime as dt
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .ingest import EventKind, EventRecord

logger = logging.getLogger(__name__)

DEFAULT_ONSET_DAYS = 28
DEFAULT_WASHOUT_DAYS = 30


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TreatmentBlock:
    patient_id: str
    treatment: str
    start: dt.date
    end: dt.date
    onset_end: dt.date

    @property
    def target_window_days(self) -> int:
        return (self.end - self.onset_end).days


def build_treatment_blocks(
    events: Sequence[EventRecord],
    treatment_codes: Mapping[str, str],
    washout_days: int = DEFAULT_WASHOUT_DAYS,
    onset_days: int = DEFAULT_ONSET_DAYS,
) -> list[TreatmentBlock]:
    """Chain prescription fills into blocks, one list per (patient, treatment).

    Events whose code is not in ``treatment_codes`` are ignored. A fill
    joins the open block when ``fill_date - coverage_end <= washout_days``,
    where ``coverage_end`` is the latest ``date + days_supply`` seen so far in
    the block. ``onset_end`` is capped at ``end`` so a block shorter than the
    onset window has an empty target window.
    """
    if washout_days <= 0:
        raise ConfigurationError(f"washout_days must be positive, got {washout_days}")
    if onset_days < 0:
        raise ConfigurationError(f"onset_days must be nonnegative, got {onset_days}")

    fills: dict[tuple[str, str], list[EventRecord]] = defaultdict(list)
    for ev in events:
        if ev.kind is not EventKind.PRESCRIPTION:
            continue
        name = treatment_codes.get(ev.code)
        if name is None:
            continue
        fills[(ev.patient_id, name)].append(ev)

    onset = dt.timedelta(days=onset_days)
    blocks = []
    for (pid, name), evs in sorted(fills.items()):
        evs = sorted(evs, key=lambda e: e.date)
        start = evs[0].date
        cover_end = start + dt.timedelta(days=evs[0].days_supply)
        for ev in evs[1:]:
            if (ev.date - cover_end).days <= washout_days:
                cover_end = max(cover_end, ev.date + dt.timedelta(days=ev.days_supply))
                continue
            blocks.append(TreatmentBlock(pid, name, start, cover_end, min(start + onset, cover_end)))
            start = ev.date
            cover_end = ev.date + dt.timedelta(days=ev.days_supply)
        blocks.append(TreatmentBlock(pid, name, start, cover_end, min(start + onset, cover_end)))
    return blocks


def compute_target(block: TreatmentBlock, steroid_events: Iterable[EventRecord]) -> float | None:
    """Covered fraction of the target window, or ``None`` for a degenerate block.

    A steroid fill on day ``a`` with supply ``k`` covers days ``a .. a+k-1``.
    Overlapping fills are unioned, so no day is counted twice, and coverage
    past ``block.end`` or inside the onset window is dropped.
    """
    lo = block.onset_end.toordinal() + 1
    hi = block.end.toordinal() + 1  # exclusive
    denom = hi - lo
    if denom <= 0:
        return None
    spans = []
    for ev in steroid_events:
        a = max(ev.date.toordinal(), lo)
        b = min(ev.date.toordinal() + ev.days_supply, hi)
        if b > a:
            spans.append((a, b))
    spans.sort()
    covered = 0
    cur_a = cur_b = None
    for a, b in spans:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                covered += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        covered += cur_b - cur_a
    return min(1.0, max(0.0, covered / denom))


def steroid_events_by_patient(events: Iterable[EventRecord],
                              steroid_codes: Iterable[str]) -> dict[str, list[EventRecord]]:
    codes = set(steroid_codes)
    out: dict[str, list[EventRecord]] = defaultdict(list)
    for ev in events:
        if ev.kind is EventKind.PRESCRIPTION and ev.code in codes:
            out[ev.patient_id].append(ev)
    return out


def block_targets(blocks: Sequence[TreatmentBlock], events: Sequence[EventRecord],
                  steroid_codes: Iterable[str]) -> list[float | None]:
    steroids = steroid_events_by_patient(events, steroid_codes)
    return [compute_target(b, steroids.get(b.patient_id, ())) for b in blocks]
