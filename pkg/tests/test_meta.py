import numpy as np
import pandas as pd
import pytest

from noveltx.embeddings import TreatmentEmbedding
from noveltx.evaluation import BASELINE, EvalRecord
from noveltx.meta import (COVARIATE_KINDS, DegenerateOutcomeError, MetaError, build_meta_table,
                          meta_columns, regressions_to_json, regressions_to_text,
                          run_meta_regressions)

META_COLUMNS = [
    "iteration", "unseen_treatment", "ft_kegg_embeddings_perf_higher_than_ft_no_treatment",
    "min_kegg_eucl_dist_to_others", "min_kegg_cosine_dist_to_others",
    "kegg_eucl_dist_to_mean", "kegg_cosine_dist_to_mean",
]


def embedding(n, seed=0, dim=3):
    rng = np.random.default_rng(seed)
    return TreatmentEmbedding("kegg", {f"t{k:02d}": rng.normal(size=dim) for k in range(n)}, dim)


def records(n_iter, names, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_iter):
        for t in names:
            out.append(EvalRecord(i, t, BASELINE, 0.1))
            out.append(EvalRecord(i, t, "kegg", 0.1, int(rng.random() < 0.5)))
    return out


def table_from(dist, win):
    """Meta table with the same covariate in all four columns."""
    cols = meta_columns()
    frame = {cols["iteration"]: np.arange(len(win)), cols["unseen_treatment"]: ["t"] * len(win),
             cols["win"]: np.asarray(win, dtype=int)}
    for kind in COVARIATE_KINDS:
        frame[cols[kind]] = np.asarray(dist, dtype=float)
    return pd.DataFrame(frame)


def test_row_counts_and_column_names():
    emb = embedding(14)
    names = sorted(emb.vectors)
    table = build_meta_table(records(10, names), emb)
    assert len(table) == 140
    assert list(table.columns) == META_COLUMNS
    small = build_meta_table(records(1, names[:2]), embedding(2))
    assert len(small) == 2


def test_distances_repeat_across_iterations():
    emb = embedding(5)
    table = build_meta_table(records(4, sorted(emb.vectors)), emb)
    per_treatment = table.groupby("unseen_treatment")[META_COLUMNS[3:]].nunique()
    assert (per_treatment == 1).all().all()


def test_missing_treatment_is_an_error():
    emb = embedding(3)
    recs = records(1, sorted(emb.vectors) + ["zz"])
    with pytest.raises(MetaError, match="zz"):
        build_meta_table(recs, emb)


def test_skipped_cells_leave_no_rows():
    emb = embedding(3)
    recs = [r for r in records(2, sorted(emb.vectors)) if not (r.iteration == 1 and r.unseen_treatment == "t00")]
    assert len(build_meta_table(recs, emb)) == 5


def test_degenerate_outcome():
    with pytest.raises(DegenerateOutcomeError):
        run_meta_regressions(table_from([0.1, 0.2, 0.3], [1, 1, 1]))


def test_threshold_rule_is_flagged_as_separation():
    # win exactly when distance < median: perfectly separated, slope heads to -inf
    dist = np.linspace(0, 1, 40)
    fit = run_meta_regressions(table_from(dist, dist < np.median(dist)))["min_cosine"]
    assert fit.coefficients[1] < 0
    assert "separation" in fit.diagnostic


def test_planted_monotone_relationship():
    rng = np.random.default_rng(3)
    dist = np.repeat(rng.uniform(0, 1, 14), 10)
    win = rng.random(len(dist)) < 1 / (1 + np.exp(-(3 - 6 * dist)))
    fits = run_meta_regressions(table_from(dist, win))
    for fit in fits.values():
        assert fit.coefficients[1] < 0 and fit.p_values[1] < 0.01


def test_permuted_labels_mostly_insignificant():
    rng = np.random.default_rng(4)
    dist = np.repeat(rng.uniform(0, 1, 14), 10)
    base = rng.random(len(dist)) < 0.5
    small = 0
    for _ in range(100):
        fit = run_meta_regressions(table_from(dist, rng.permutation(base)))["min_eucl"]
        small += abs(fit.z_values[1]) < 1.96
    assert small >= 90


@pytest.mark.parametrize("a, b", [(2.0, 0.0), (0.5, 3.0), (10.0, -1.0)])
def test_affine_rescaling_keeps_z(a, b):
    rng = np.random.default_rng(5)
    dist = rng.uniform(0, 1, 100)
    win = rng.random(100) < 1 / (1 + np.exp(-(1 - 2 * dist)))
    f1 = run_meta_regressions(table_from(dist, win))["min_cosine"]
    f2 = run_meta_regressions(table_from(a * dist + b, win))["min_cosine"]
    assert f2.z_values[1] == pytest.approx(f1.z_values[1], abs=1e-6)
    assert f2.p_values[1] == pytest.approx(f1.p_values[1], abs=1e-6)
    assert f2.coefficients[1] == pytest.approx(f1.coefficients[1] / a, rel=1e-6)


def test_reports():
    emb = embedding(6)
    table = build_meta_table(records(5, sorted(emb.vectors)), emb)
    fits = run_meta_regressions(table)
    assert list(fits) == list(COVARIATE_KINDS)
    assert "min_kegg_cosine_dist_to_others" in regressions_to_text(fits)
    assert '"p_values"' in regressions_to_json(fits)
