"""Bootstrapped leave-one-treatment-out comparison against a treatment-blind baseline.

For every bootstrap iteration and every treatment: hold the treatment out,
train a covariates-only baseline on the rest, then one model per embedding
method on covariates plus the treatment's vector, and compare test MSEs.

Win flag: 1 when the method's MSE is strictly lower than the baseline's.
The literal "metric higher than baseline" rule would reward worse models
under MSE; the lower-is-better reading is the one that matches "better model
performance", so that is what is used here.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .embeddings import METHODS, TreatmentEmbedding, Vocabulary, one_hot_embed
from .features import MasterRow, covariate_columns
from .learners import ForestParams, mse, rf_predict, rf_train, select_features

logger = logging.getLogger(__name__)

BASELINE = "baseline"
METHOD_LABELS = {
    "one_hot": "One-hot encoding",
    "smiles": "SMILES-based embeddings",
    "kegg": "Kegg-based embeddings",
}
TREATMENT_LABEL = "Unseen treatment"
RECORD_COLUMNS = ["iteration", "unseen_treatment", "method", "mse", "win"]
SKIP_ABSENT = "absent_from_bootstrap"
SKIP_NO_VECTOR = "no_embedding"


class HarnessIntegrityError(AssertionError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    iteration: int
    unseen_treatment: str
    method: str
    mse: float
    win: int | None = None


@dataclass(frozen=True)
class SkipRecord:
    iteration: int
    unseen_treatment: str
    method: str
    reason: str


@dataclass
class EvalConfig:
    n_bootstrap: int = 10
    seed: int = 0
    k_features: int = 20
    methods: tuple[str, ...] = METHODS
    pca_k: dict = field(default_factory=lambda: {"smiles": 3, "kegg": 3})
    forest: ForestParams = field(default_factory=ForestParams)
    # one-hot level encoded as all zeros (besides the unseen treatment); None keeps
    # a full indicator over the training treatments
    one_hot_reference: str | None = None

    def __post_init__(self):
        if self.n_bootstrap < 1:
            raise EvaluationError("n_bootstrap must be >= 1")
        if self.k_features < 1:
            raise EvaluationError("k_features must be >= 1")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise EvaluationError(f"unknown method(s): {unknown}")
        self.methods = tuple(self.methods)

    def to_dict(self) -> dict:
        f = self.forest
        return {
            "n_bootstrap": self.n_bootstrap,
            "seed": self.seed,
            "k_features": self.k_features,
            "methods": list(self.methods),
            "pca_k": dict(self.pca_k),
            "forest": {"n_trees": f.n_trees, "colsample_bynode": f.colsample_bynode,
                       "min_child_weight": f.min_child_weight, "max_depth": f.max_depth,
                       "bootstrap": f.bootstrap},
            "one_hot_reference": self.one_hot_reference,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalConfig":
        data = dict(data)
        forest = ForestParams(**data.pop("forest", {}))
        methods = tuple(data.pop("methods", METHODS))
        return cls(forest=forest, methods=methods, **data)


@dataclass
class MasterData:
    """Array view of the master table."""

    treatments: np.ndarray
    X: np.ndarray
    y: np.ndarray
    names: list[str]

    def __post_init__(self):
        self.treatments = np.asarray(self.treatments, dtype=object)
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.treatments), -1)
        self.y = np.asarray(self.y, dtype=float)
        if not (len(self.treatments) == len(self.X) == len(self.y)):
            raise ValueError("treatments, X and y must have the same number of rows")

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "MasterData":
        return MasterData(self.treatments[idx], self.X[idx], self.y[idx], self.names)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "MasterData":
        names = covariate_columns(frame)
        return cls(frame["treatment"].astype(str).to_numpy(dtype=object),
                   frame[names].to_numpy(dtype=float), frame["target"].to_numpy(dtype=float), names)

    @classmethod
    def from_rows(cls, rows: Sequence[MasterRow], names: Sequence[str]) -> "MasterData":
        return cls(np.array([r.treatment for r in rows], dtype=object),
                   np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), len(names)),
                   np.array([r.target for r in rows], dtype=float), list(names))


# ---------------------------------------------------------------- seeds and resampling

def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def bootstrap_indices(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise EvaluationError("cannot bootstrap an empty table")
    return np.random.default_rng(seed).integers(0, n, n)


def bootstrap_resample(table, seed: int):
    """Same-size sample with replacement; works on sequences and ``MasterData``."""
    idx = bootstrap_indices(len(table), seed)
    if isinstance(table, MasterData):
        return table.take(idx)
    return [table[i] for i in idx]


class MissingTreatment(LookupError):
    """The held-out treatment has no rows in this sample."""


def loto_split(table, unseen_treatment: str):
    """Partition into (train, test) by treatment; ``MissingTreatment`` when absent."""
    if isinstance(table, MasterData):
        mask = table.treatments == unseen_treatment
        if not mask.any():
            raise MissingTreatment(unseen_treatment)
        return table.take(np.flatnonzero(~mask)), table.take(np.flatnonzero(mask))
    train = [r for r in table if r.treatment != unseen_treatment]
    test = [r for r in table if r.treatment == unseen_treatment]
    if not test:
        raise MissingTreatment(unseen_treatment)
    return train, test


def win_flag(mse_method: float, mse_baseline: float) -> int:
    # MSE is lower-is-better: a "higher metric" reading would reward the worse model
    if not (np.isfinite(mse_method) and np.isfinite(mse_baseline)):
        raise ValueError("win_flag needs finite MSE values")
    return int(mse_method < mse_baseline)


# ---------------------------------------------------------------- models

def fit_predict(X_train, y_train, X_test, config: EvalConfig, seed: int) -> np.ndarray:
    """Top-k feature selection on the training split, then a forest."""
    X_train = np.asarray(X_train, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    if X_train.shape[1] > config.k_features:
        keep = select_features(X_train, y_train, config.k_features, config.forest, seed)
        X_train = X_train[:, keep]
        X_test = X_test[:, keep]
    model = rf_train(X_train, y_train, config.forest, seed)
    return rf_predict(model, X_test)


def _one_hot_vocabulary(train_treatments, reference: str | None) -> Vocabulary:
    present = set(train_treatments)
    if reference is not None:
        present.discard(reference)
    return Vocabulary.from_tokens(present)


def method_features(train: MasterData, test: MasterData, method: str,
                    embedding: TreatmentEmbedding | None, config: EvalConfig):
    """Covariates joined with treatment vectors.

    Returns ``(X_train, y_train, X_test)`` or ``None`` when the held-out
    treatment has no vector. Training rows of treatments without a vector
    are dropped.
    """
    if method == "one_hot":
        vocab = _one_hot_vocabulary(train.treatments, config.one_hot_reference)
        table = {t: one_hot_embed(t, vocab) for t in set(train.treatments) | set(test.treatments)}
        dim = len(vocab)
        keep = np.ones(len(train), dtype=bool)
    else:
        if embedding is None:
            raise EvaluationError(f"no embedding supplied for method {method!r}")
        if any(t not in embedding for t in set(test.treatments)):
            return None
        table = embedding.vectors
        dim = embedding.dim
        keep = np.array([t in embedding for t in train.treatments], dtype=bool)
        if not keep.any():
            return None

    def join(part: MasterData, rows) -> np.ndarray:
        E = np.array([table[t] for t in part.treatments[rows]], dtype=float).reshape(-1, dim)
        return np.hstack([part.X[rows], E])

    all_test = np.ones(len(test), dtype=bool)
    return join(train, keep), train.y[keep], join(test, all_test)


@dataclass
class PairResult:
    mse_method: float
    mse_baseline: float
    pred_method: np.ndarray
    pred_baseline: np.ndarray


def evaluate_pair_detail(train: MasterData, test: MasterData, method: str,
                         embedding: TreatmentEmbedding | None, config: EvalConfig,
                         seed: int = 0) -> PairResult | None:
    if len(train) == 0 or len(test) == 0:
        raise EvaluationError("train and test must be nonempty")
    feats = method_features(train, test, method, embedding, config)
    if feats is None:
        return None
    base = fit_predict(train.X, train.y, test.X, config, seed)
    pred = fit_predict(feats[0], feats[1], feats[2], config, seed)
    return PairResult(mse(pred, test.y), mse(base, test.y), pred, base)


def evaluate_pair(train: MasterData, test: MasterData, method: str,
                  embedding: TreatmentEmbedding | None, config: EvalConfig,
                  seed: int = 0) -> tuple[float, float]:
    """(method MSE, baseline MSE) on the test split; both models share ``seed``."""
    res = evaluate_pair_detail(train, test, method, embedding, config, seed)
    if res is None:
        raise MissingTreatment(f"no {method} vector for the held-out treatment")
    return res.mse_method, res.mse_baseline


# ---------------------------------------------------------------- harness

@dataclass
class HarnessAudit:
    """Checks run inside the harness; ``verify`` raises on any violation."""

    cells: int = 0
    disjoint_checks: int = 0
    baseline_fits: Counter = field(default_factory=Counter)
    method_baseline: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    expected_grid: int = 0

    def check_disjoint(self, key, train_treatments, unseen):
        self.disjoint_checks += 1
        if unseen in set(train_treatments):
            self.violations.append(f"{key}: held-out treatment {unseen!r} present in training rows")

    def verify(self, records: Sequence[EvalRecord], skips: Sequence[SkipRecord]) -> None:
        base = {(r.iteration, r.unseen_treatment): r.mse for r in records if r.method == BASELINE}
        for key, n in self.baseline_fits.items():
            if n != 1:
                self.violations.append(f"{key}: baseline fitted {n} times")
        for (i, t, m), used in self.method_baseline.items():
            if base.get((i, t)) != used:
                self.violations.append(f"({i}, {t!r}, {m}): compared against a different baseline")
        n_method = sum(1 for r in records if r.method != BASELINE)
        if n_method + len(skips) != self.expected_grid:
            self.violations.append(
                f"grid incomplete: {n_method} records + {len(skips)} skips != {self.expected_grid}")
        seen = Counter((r.iteration, r.unseen_treatment, r.method) for r in records)
        seen.update((s.iteration, s.unseen_treatment, s.method) for s in skips)
        dup = [k for k, c in seen.items() if c > 1]
        if dup:
            self.violations.append(f"duplicate grid entries: {dup[:3]}")
        if self.violations:
            raise HarnessIntegrityError("; ".join(self.violations))

    def to_dict(self) -> dict:
        return {
            "cells": self.cells,
            "disjointness_checks": self.disjoint_checks,
            "baseline_fits": int(sum(self.baseline_fits.values())),
            "method_comparisons": len(self.method_baseline),
            "expected_grid": self.expected_grid,
            "violations": list(self.violations),
        }


@dataclass
class EvalResult:
    records: list[EvalRecord]
    skips: list[SkipRecord]
    audit: HarnessAudit
    treatments: list[str]
    methods: tuple[str, ...]


_WORKER: dict = {}


def _init_worker(master, embeddings, config, treatments):
    _WORKER.update(master=master, embeddings=embeddings, config=config, treatments=treatments)


def _run_cell(i: int, t_index: int, boot_idx: np.ndarray):
    master: MasterData = _WORKER["master"]
    embeddings = _WORKER["embeddings"]
    config: EvalConfig = _WORKER["config"]
    t = _WORKER["treatments"][t_index]
    records, skips, notes = [], [], {"disjoint": [], "baseline": None, "compared": []}

    sample = master.take(boot_idx)
    try:
        train, test = loto_split(sample, t)
    except MissingTreatment:
        skips.extend(SkipRecord(i, t, m, SKIP_ABSENT) for m in config.methods)
        return records, skips, notes
    notes["disjoint"] = sorted(set(train.treatments))

    seed = derive_seed(config.seed, 1, i, t_index)
    base_pred = fit_predict(train.X, train.y, test.X, config, seed)
    base_mse = mse(base_pred, test.y)
    notes["baseline"] = base_mse
    records.append(EvalRecord(i, t, BASELINE, base_mse, None))
    for m in config.methods:
        feats = method_features(train, test, m, embeddings.get(m), config)
        if feats is None:
            skips.append(SkipRecord(i, t, m, SKIP_NO_VECTOR))
            continue
        pred = fit_predict(feats[0], feats[1], feats[2], config, seed)
        err = mse(pred, test.y)
        records.append(EvalRecord(i, t, m, err, win_flag(err, base_mse)))
        notes["compared"].append((m, base_mse))
    return records, skips, notes


def _sort_key(methods):
    order = {BASELINE: -1, **{m: k for k, m in enumerate(methods)}}
    return lambda r: (r.iteration, r.unseen_treatment, order[r.method])


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_evaluation(master: MasterData, embeddings: Mapping[str, TreatmentEmbedding],
                   config: EvalConfig, jobs: int = 1) -> EvalResult:
    """Full grid: bootstrap (outer) x held-out treatment x method (inner).

    Cells run in a process pool when ``jobs > 1``; output does not depend on
    ``jobs`` because every random draw is keyed on (seed, iteration, treatment).
    """
    treatments = sorted(set(master.treatments))
    if len(treatments) < 2:
        raise EvaluationError("need at least 2 treatments")
    for m in config.methods:
        if m != "one_hot" and m not in embeddings:
            raise EvaluationError(f"no embedding supplied for method {m!r}")
    embeddings = {m: embeddings[m] for m in config.methods if m in embeddings}

    audit = HarnessAudit(expected_grid=config.n_bootstrap * len(treatments) * len(config.methods))
    tasks = []
    for i in range(config.n_bootstrap):
        idx = bootstrap_indices(len(master), derive_seed(config.seed, 0, i))
        tasks.extend((i, k, idx) for k in range(len(treatments)))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(master, embeddings, config, treatments)) as pool:
            futures = [pool.submit(_run_cell, *task) for task in tasks]
            results = [f.result() for f in futures]
    else:
        _init_worker(master, embeddings, config, treatments)
        results = [_run_cell(*task) for task in tasks]

    records, skips = [], []
    for (i, k, _), (recs, sk, notes) in zip(tasks, results):
        t = treatments[k]
        audit.cells += 1
        if notes["baseline"] is not None:
            audit.check_disjoint((i, t), notes["disjoint"], t)
            audit.baseline_fits[(i, t)] += 1
        for m, used in notes["compared"]:
            audit.method_baseline[(i, t, m)] = used
        records.extend(recs)
        skips.extend(sk)
    key = _sort_key(config.methods)
    records.sort(key=key)
    skips.sort(key=key)
    audit.verify(records, skips)
    logger.info("evaluation: %d records, %d skips", len(records), len(skips))
    return EvalResult(records, skips, audit, treatments, config.methods)


# ---------------------------------------------------------------- summaries and I/O

def win_rates(records: Iterable[EvalRecord], skips: Iterable[SkipRecord] = ()) -> dict:
    """(treatment, method) -> fraction of evaluated iterations won.

    Skips for a treatment missing from the bootstrap sample leave the
    denominator. A method with no vector for the treatment cannot produce a
    better model, so such iterations count as not won.
    """
    wins = defaultdict(list)
    for r in records:
        if r.method != BASELINE:
            wins[(r.unseen_treatment, r.method)].append(r.win)
    for s in skips:
        if s.reason == SKIP_NO_VECTOR:
            wins[(s.unseen_treatment, s.method)].append(0)
    return {k: float(np.mean(v)) for k, v in wins.items()}


def format_percent(rate: float | None) -> str:
    return "n/a" if rate is None else f"{100.0 * rate:.2f}%"


def summarize_win_rates(records: Iterable[EvalRecord], skips: Iterable[SkipRecord] = (),
                        treatments: Sequence[str] | None = None,
                        methods: Sequence[str] = METHODS) -> pd.DataFrame:
    records = list(records)
    rates = win_rates(records, skips)
    if treatments is None:
        treatments = sorted({r.unseen_treatment for r in records} | {k[0] for k in rates})
    rows = []
    for t in treatments:
        row = {TREATMENT_LABEL: t}
        for m in methods:
            row[METHOD_LABELS[m]] = format_percent(rates.get((t, m)))
        rows.append(row)
    return pd.DataFrame(rows, columns=[TREATMENT_LABEL] + [METHOD_LABELS[m] for m in methods])


def records_to_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([r.iteration, r.unseen_treatment, r.method, repr(float(r.mse)),
                    "" if r.win is None else int(r.win)])
    return buf.getvalue()


def write_records(records: Sequence[EvalRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(records_to_csv(records))


def read_records(path) -> list[EvalRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_COLUMNS:
            raise ValueError(f"{path}: expected columns {RECORD_COLUMNS}")
        for row in reader:
            out.append(EvalRecord(int(row["iteration"]), row["unseen_treatment"], row["method"],
                                  float(row["mse"]), None if row["win"] == "" else int(row["win"])))
    return out


def write_skips(skips: Sequence[SkipRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "unseen_treatment", "method", "reason"])
        for s in skips:
            w.writerow([s.iteration, s.unseen_treatment, s.method, s.reason])


def read_skips(path) -> list[SkipRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [SkipRecord(int(r["iteration"]), r["unseen_treatment"], r["method"], r["reason"])
                for r in csv.DictReader(fh)]


def write_win_rates(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, lineterminator="\n")
