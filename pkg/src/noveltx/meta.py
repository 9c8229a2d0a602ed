"""Meta-analysis: does embedding-space novelty predict when a method beats the baseline?

One row per (iteration, held-out treatment) with the method's win flag and
four distances of the held-out treatment in embedding space. Each distance
then gets its own univariate logistic regression (intercept + covariate).
Rows for the same treatment repeat across iterations; plain standard
errors ignore that clustering.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .embeddings import TreatmentEmbedding, novelty_features
from .evaluation import BASELINE, EvalRecord
from .learners import LogisticFit, logistic_fit

logger = logging.getLogger(__name__)

COVARIATE_KINDS = ("min_cosine", "min_eucl", "cosine_to_mean", "eucl_to_mean")


class DegenerateOutcomeError(ValueError):
    pass


class MetaError(ValueError):
    pass


def meta_columns(method: str = "kegg") -> dict[str, str]:
    """Column names keyed by role; ``kegg`` gives the reference layout."""
    return {
        "iteration": "iteration",
        "unseen_treatment": "unseen_treatment",
        "win": f"ft_{method}_embeddings_perf_higher_than_ft_no_treatment",
        "min_eucl": f"min_{method}_eucl_dist_to_others",
        "min_cosine": f"min_{method}_cosine_dist_to_others",
        "eucl_to_mean": f"{method}_eucl_dist_to_mean",
        "cosine_to_mean": f"{method}_cosine_dist_to_mean",
    }


@dataclass(frozen=True)
class MetaRow:
    iteration: int
    unseen_treatment: str
    win: int
    min_eucl: float
    min_cosine: float
    eucl_to_mean: float
    cosine_to_mean: float


def treatment_novelty(embedding: TreatmentEmbedding, treatments: Sequence[str]) -> dict:
    """Novelty features of each treatment against all the others in ``treatments``."""
    missing = [t for t in treatments if t not in embedding]
    if missing:
        raise MetaError(f"no {embedding.method} vector for: {', '.join(missing)}")
    out = {}
    for t in treatments:
        others = [embedding.vectors[o] for o in treatments if o != t]
        out[t] = novelty_features(embedding.vectors[t], others)
    return out


def build_meta_rows(records: Sequence[EvalRecord], embedding: TreatmentEmbedding,
                    method: str = "kegg", treatments: Sequence[str] | None = None) -> list[MetaRow]:
    rows = [r for r in records if r.method == method]
    if not rows:
        raise MetaError(f"no {method} records")
    if treatments is None:
        treatments = sorted({r.unseen_treatment for r in records if r.method != BASELINE})
    novelty = treatment_novelty(embedding, list(treatments))
    out = []
    for r in sorted(rows, key=lambda r: (r.iteration, r.unseen_treatment)):
        f = novelty[r.unseen_treatment]
        out.append(MetaRow(r.iteration, r.unseen_treatment, int(r.win), f.min_eucl, f.min_cosine,
                           f.eucl_to_mean, f.cosine_to_mean))
    return out


def build_meta_table(records: Sequence[EvalRecord], embedding: TreatmentEmbedding,
                     method: str = "kegg", treatments: Sequence[str] | None = None) -> pd.DataFrame:
    """Meta table with the fixed column names (method name substituted)."""
    cols = meta_columns(method)
    rows = build_meta_rows(records, embedding, method, treatments)
    frame = pd.DataFrame({
        cols["iteration"]: [r.iteration for r in rows],
        cols["unseen_treatment"]: [r.unseen_treatment for r in rows],
        cols["win"]: [r.win for r in rows],
        cols["min_eucl"]: [r.min_eucl for r in rows],
        cols["min_cosine"]: [r.min_cosine for r in rows],
        cols["eucl_to_mean"]: [r.eucl_to_mean for r in rows],
        cols["cosine_to_mean"]: [r.cosine_to_mean for r in rows],
    })
    return frame


def _method_from_columns(table: pd.DataFrame) -> str:
    for c in table.columns:
        if c.startswith("ft_") and c.endswith("_embeddings_perf_higher_than_ft_no_treatment"):
            return c[3:-len("_embeddings_perf_higher_than_ft_no_treatment")]
    raise MetaError("table has no win-flag column")


def run_meta_regressions(table: pd.DataFrame, method: str | None = None) -> dict[str, LogisticFit]:
    """Four univariate logistic fits of the win flag, one per distance covariate."""
    method = method or _method_from_columns(table)
    cols = meta_columns(method)
    y = table[cols["win"]].to_numpy(dtype=float)
    if len(y) == 0 or np.all(y == y[0]):
        raise DegenerateOutcomeError(
            f"win flag is constant ({'empty table' if len(y) == 0 else int(y[0])}); "
            "logistic regression needs both outcomes")
    fits = {}
    for kind in COVARIATE_KINDS:
        name = cols[kind]
        x = table[name].to_numpy(dtype=float)
        X = np.column_stack([np.ones_like(x), x])
        fits[kind] = logistic_fit(X, y, names=["const", name])
    return fits


def regressions_to_json(fits: Mapping[str, LogisticFit]) -> str:
    return json.dumps({k: f.to_dict() for k, f in fits.items()}, indent=2, sort_keys=True) + "\n"


def regressions_to_text(fits: Mapping[str, LogisticFit]) -> str:
    parts = []
    for kind, fit in fits.items():
        parts.append(f"== win ~ {fit.names[1]}")
        parts.append(fit.summary())
        parts.append("")
    return "\n".join(parts)


def write_meta_table(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, lineterminator="\n")
