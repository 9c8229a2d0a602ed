"""Glue between the stages: events -> master table -> embeddings -> evaluation -> meta."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import pandas as pd

from .cohort import build_treatment_blocks
from .config import StudyConfig
from .embeddings import TreatmentEmbedding, kegg_embedding, one_hot_embedding, smiles_embedding
from .evaluation import EvalConfig, EvalResult, MasterData, run_evaluation
from .features import build_master_table, covariate_names, master_frame
from .ingest import Demographics, EventRecord, TreatmentCatalogEntry
from .kegg import KeggFetcher, load_corpus
from .meta import build_meta_table, run_meta_regressions

logger = logging.getLogger(__name__)


def master_from_events(events: Sequence[EventRecord], demographics: Mapping[str, Demographics],
                       study: StudyConfig) -> pd.DataFrame:
    blocks = build_treatment_blocks(events, study.treatment_codes, study.washout_days, study.onset_days)
    rows = build_master_table(blocks, events, study.features, demographics, study.steroid_codes)
    logger.info("%d blocks, %d master rows", len(blocks), len(rows))
    return master_frame(rows, covariate_names(study.features))


def kegg_treatment_embedding(catalog: Sequence[TreatmentCatalogEntry], cache_dir,
                             allow_network: bool = False, pca_k: int = 3,
                             include_linked: bool = True, reduce: bool = True,
                             fetcher: KeggFetcher | None = None):
    """KEGG bag-of-tokens embedding over the catalog drugs (plus linked drugs)."""
    with_code = [e for e in catalog if e.kegg_code]
    corpus = load_corpus(sorted({e.kegg_code for e in with_code}), cache_dir, allow_network,
                         include_linked=include_linked, fetcher=fetcher)
    tokens = corpus.tokens()
    return kegg_embedding(tokens, {e.generic_name: e.kegg_code for e in with_code}, pca_k, reduce)


def smiles_treatment_embedding(catalog: Sequence[TreatmentCatalogEntry], pca_k: int = 3):
    return smiles_embedding({e.generic_name: e.smiles for e in catalog}, pca_k)


def build_embedding(method: str, catalog: Sequence[TreatmentCatalogEntry], cache_dir=None,
                    allow_network: bool = False, pca_k: int = 3):
    """Returns (embedding, pca_model or None)."""
    if method == "one_hot":
        return one_hot_embedding(e.generic_name for e in catalog), None
    if method == "smiles":
        return smiles_treatment_embedding(catalog, pca_k)
    if method == "kegg":
        if cache_dir is None:
            raise ValueError("kegg embedding needs a cache directory")
        return kegg_treatment_embedding(catalog, cache_dir, allow_network, pca_k)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ExperimentResult:
    master: MasterData
    embeddings: dict[str, TreatmentEmbedding]
    evaluation: EvalResult
    meta_table: pd.DataFrame | None
    fits: dict | None


def run_experiment(frame: pd.DataFrame, catalog: Sequence[TreatmentCatalogEntry], cache_dir,
                   config: EvalConfig, meta_method: str | None = "kegg", jobs: int = 1,
                   allow_network: bool = False) -> ExperimentResult:
    """Evaluation grid plus (optionally) the meta-analysis for one method."""
    master = MasterData.from_frame(frame)
    embeddings = {}
    for m in config.methods:
        if m == "one_hot":
            continue
        embeddings[m], _ = build_embedding(m, catalog, cache_dir, allow_network, config.pca_k.get(m, 3))
    result = run_evaluation(master, embeddings, config, jobs)
    table = fits = None
    if meta_method is not None:
        emb = embeddings.get(meta_method) or one_hot_embedding(result.treatments)
        table = build_meta_table(result.records, emb, meta_method, result.treatments)
        fits = run_meta_regressions(table, meta_method)
    return ExperimentResult(master, embeddings, result, table, fits)
