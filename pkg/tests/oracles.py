"""Brute-force reference implementations used by several test modules."""
import datetime as dt

import numpy as np

from noveltx.ingest import EventKind, EventRecord

EPOCH = dt.date(2018, 1, 1)
TREATMENT_CODES = {"T_A": "alpha", "T_B": "beta", "T_A2": "alpha"}
STEROID_CODES = ["S1", "S2"]


def day(n: int) -> dt.date:
    return EPOCH + dt.timedelta(days=n)


def cohort_oracle(events, treatment_codes, steroid_codes, washout, onset):
    """Blocks and targets by enumerating individual days.

    A block is a maximal set of covered days (union of fill supplies) whose
    uncovered gaps are at most ``washout`` days long. Its end is the day after
    its last covered day. The target counts steroid-covered days among
    ``onset_end + 1 .. end``.
    """
    covered = {}
    steroid_days = {}
    for ev in events:
        if ev.kind is not EventKind.PRESCRIPTION:
            continue
        first = ev.date.toordinal()
        span = set(range(first, first + ev.days_supply))
        if ev.code in treatment_codes:
            covered.setdefault((ev.patient_id, treatment_codes[ev.code]), set()).update(span)
        elif ev.code in steroid_codes:
            steroid_days.setdefault(ev.patient_id, set()).update(span)
    out = []
    for (pid, name), days in sorted(covered.items()):
        groups, current, prev = [], [], None
        for d in sorted(days):
            if prev is not None and d - prev - 1 > washout:
                groups.append(current)
                current = []
            current.append(d)
            prev = d
        groups.append(current)
        for g in groups:
            start, end = g[0], g[-1] + 1
            onset_end = min(start + onset, end)
            window = range(onset_end + 1, end + 1)
            if len(window) == 0:
                target = None
            else:
                hit = sum(1 for d in window if d in steroid_days.get(pid, ()))
                target = hit / len(window)
            out.append((pid, name, dt.date.fromordinal(start), dt.date.fromordinal(end),
                        dt.date.fromordinal(onset_end), target))
    return out


def random_event_stream(rng, max_events=50, n_patients=3):
    """Random mix of treatment fills, steroid fills, diagnoses and unknown codes."""
    n = int(rng.integers(1, max_events + 1))
    events = []
    for _ in range(n):
        pid = f"p{int(rng.integers(0, n_patients))}"
        when = day(int(rng.integers(0, 300)))
        r = rng.random()
        if r < 0.5:
            code = str(rng.choice(list(TREATMENT_CODES)))
            events.append(EventRecord(pid, when, EventKind.PRESCRIPTION, code,
                                      int(rng.integers(1, 60))))
        elif r < 0.8:
            events.append(EventRecord(pid, when, EventKind.PRESCRIPTION, str(rng.choice(STEROID_CODES)),
                                      int(rng.integers(1, 40))))
        elif r < 0.9:
            events.append(EventRecord(pid, when, EventKind.PRESCRIPTION, "OTHER",
                                      int(rng.integers(1, 30))))
        else:
            events.append(EventRecord(pid, when, EventKind.DIAGNOSIS, "K51.90"))
    return events


def newton_oracle(x, y, iters=200):
    """Plain Newton-Raphson for intercept + one slope, written out by hand."""
    a = b = 0.0
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(a + b * x)))
        w = p * (1 - p)
        g0, g1 = np.sum(y - p), np.sum((y - p) * x)
        h00, h01, h11 = np.sum(w), np.sum(w * x), np.sum(w * x * x)
        det = h00 * h11 - h01 * h01
        da = (h11 * g0 - h01 * g1) / det
        db = (h00 * g1 - h01 * g0) / det
        a, b = a + da, b + db
        if max(abs(da), abs(db)) < 1e-12:
            break
    p = 1.0 / (1.0 + np.exp(-(a + b * x)))
    w = p * (1 - p)
    h00, h01, h11 = np.sum(w), np.sum(w * x), np.sum(w * x * x)
    det = h00 * h11 - h01 * h01
    return np.array([a, b]), np.sqrt(np.array([h11 / det, h00 / det]))


def pca_oracle(X, k):
    """Scores from an explicit covariance eigendecomposition (sign-free comparison)."""
    Xc = X - X.mean(axis=0)
    C = np.cov(Xc, rowvar=False, ddof=1)
    vals, vecs = np.linalg.eig(C)
    order = np.argsort(-vals.real)[:k]
    return Xc @ vecs[:, order].real, vals.real[order]


def same_up_to_sign(A, B, tol):
    for j in range(A.shape[1]):
        if not (np.allclose(A[:, j], B[:, j], atol=tol) or np.allclose(A[:, j], -B[:, j], atol=tol)):
            return False
    return True
