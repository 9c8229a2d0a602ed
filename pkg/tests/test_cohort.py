import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noveltx.cohort import (ConfigurationError, TreatmentBlock, build_treatment_blocks,
                            compute_target)
from noveltx.ingest import EventKind, EventRecord
from oracles import STEROID_CODES, TREATMENT_CODES, cohort_oracle, day, random_event_stream

P = EventKind.PRESCRIPTION


def fill(d, supply, code="T_A", pid="p"):
    return EventRecord(pid, day(d), P, code, supply)


def blocks_and_targets(events, washout=30, onset=28):
    blocks = build_treatment_blocks(events, TREATMENT_CODES, washout, onset)
    steroids = [e for e in events if e.code in STEROID_CODES]
    return [(b.patient_id, b.treatment, b.start, b.end, b.onset_end,
             compute_target(b, [e for e in steroids if e.patient_id == b.patient_id]))
            for b in blocks]


def test_single_prescription_block():
    (b,) = build_treatment_blocks([fill(0, 30)], TREATMENT_CODES)
    assert (b.start, b.end) == (day(0), day(30))


def test_gap_within_washout_merges():
    blocks = build_treatment_blocks([fill(0, 30), fill(35, 30)], TREATMENT_CODES, washout_days=14)
    assert [(b.start, b.end) for b in blocks] == [(day(0), day(65))]
    assert blocks_and_targets([fill(0, 30), fill(35, 30)], 14) == \
        cohort_oracle([fill(0, 30), fill(35, 30)], TREATMENT_CODES, STEROID_CODES, 14, 28)


def test_gap_beyond_washout_splits():
    blocks = build_treatment_blocks([fill(0, 30), fill(100, 30)], TREATMENT_CODES, washout_days=14)
    assert len(blocks) == 2


def test_unknown_codes_ignored_and_bad_config():
    assert build_treatment_blocks([fill(0, 30, code="ZZZ")], TREATMENT_CODES) == []
    with pytest.raises(ConfigurationError):
        build_treatment_blocks([], TREATMENT_CODES, washout_days=0)


def test_target_examples():
    block = TreatmentBlock("p", "alpha", day(0), day(100), day(30))
    assert compute_target(block, []) == 0.0
    assert compute_target(block, [fill(0, 200, "S1")]) == 1.0
    # onset-period steroid excluded, later one counted: 20 of 70 window days
    assert compute_target(block, [fill(10, 10, "S1"), fill(50, 20, "S1")]) == 20 / 70


def test_overlapping_steroids_are_unioned():
    block = TreatmentBlock("p", "alpha", day(0), day(100), day(30))
    assert compute_target(block, [fill(40, 20, "S1"), fill(50, 20, "S2")]) == 30 / 70


def test_degenerate_block():
    block = TreatmentBlock("p", "alpha", day(0), day(10), day(10))
    assert compute_target(block, [fill(0, 10, "S1")]) is None


def test_matches_day_oracle_on_random_streams():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        events = random_event_stream(rng)
        washout, onset = int(rng.integers(1, 40)), int(rng.integers(0, 40))
        assert blocks_and_targets(events, washout, onset) == \
            cohort_oracle(events, TREATMENT_CODES, STEROID_CODES, washout, onset)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 200), st.integers(2, 90), st.integers(1, 89), st.integers(0, 2**31 - 1))
def test_splitting_a_fill_changes_nothing(start, supply, cut, seed):
    cut = min(cut, supply - 1)
    rng = np.random.default_rng(seed)
    background = [fill(int(d), int(s), "S1") for d, s in zip(rng.integers(0, 300, 5), rng.integers(1, 30, 5))]
    whole = [fill(start, supply)] + background
    split = [fill(start, cut), fill(start + cut, supply - cut)] + background
    assert blocks_and_targets(whole) == blocks_and_targets(split)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 300), st.integers(1, 40))
def test_target_monotone_in_added_steroids(seed, when, supply):
    events = random_event_stream(np.random.default_rng(seed), n_patients=1)
    before = blocks_and_targets(events)
    after = blocks_and_targets(events + [fill(when, supply, "S2", pid="p0")])
    assert [b[:5] for b in before] == [b[:5] for b in after]
    for b, a in zip(before, after):
        if b[5] is not None:
            assert a[5] >= b[5]
