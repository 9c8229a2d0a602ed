import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.stats import f_oneway, spearmanr

from noveltx.pipeline import kegg_treatment_embedding, master_from_events
from noveltx.synthgen import (PRESETS, InfeasibleConfig, SynthConfig, draw_latent,
                              generate_synthetic, preset_config, write_synthetic)


def master(data):
    people = {d.patient_id: d for d in data.demographics}
    return master_from_events(data.events, people, data.study)


def test_same_seed_same_bytes(tmp_path):
    cfg = SynthConfig(n_patients=120, seed=9)
    a = write_synthetic(generate_synthetic(cfg), tmp_path / "a")
    b = write_synthetic(generate_synthetic(cfg), tmp_path / "b")
    c = write_synthetic(generate_synthetic(SynthConfig(n_patients=120, seed=10)), tmp_path / "c")
    assert a["events"].read_bytes() == b["events"].read_bytes()
    assert a["truth"].read_bytes() == b["truth"].read_bytes()
    assert a["events"].read_bytes() != c["events"].read_bytes()


def test_null_effect_targets_independent_of_treatment():
    data = generate_synthetic(SynthConfig(n_patients=2000, effect_strength=0.0, seed=1))
    assert all(v == 0.0 for v in data.true_effects.values())
    frame = master(data)
    groups = [g["target"].to_numpy() for _, g in frame.groupby("treatment")]
    assert f_oneway(*groups).pvalue > 0.01


def test_noise_free_targets_reconstructed_exactly():
    data = generate_synthetic(SynthConfig(n_patients=300, noise_sd=0.0, seed=2))
    frame = master(data).set_index("patient_id")
    assert len(frame) == 300
    for p in data.patients:
        assert frame.loc[p["patient_id"], "treatment"] == p["treatment"]
        assert frame.loc[p["patient_id"], "target"] == p["target"]
        # rounding to whole days is the only gap to the analytic value
        assert abs(p["target"] - min(max(p["expected"], 0.0), 1.0)) <= 0.5 / 90 + 1e-12


def test_realized_targets_track_true_effects():
    data = generate_synthetic(SynthConfig(n_patients=2000, seed=3))
    frame = master(data)
    x = frame["treatment"].map(data.true_effects).to_numpy()
    slope = np.polyfit(x, frame["target"].to_numpy(), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("seed", range(5))
def test_kegg_geometry_mirrors_latent(tmp_path, seed):
    data = generate_synthetic(SynthConfig(n_patients=40, seed=seed))
    paths = write_synthetic(data, tmp_path)
    emb, _ = kegg_treatment_embedding(data.catalog, paths["kegg_cache"], reduce=False)
    names = sorted(data.true_embeddings)
    latent = pdist(np.array([data.true_embeddings[n] for n in names]))
    bag = pdist(np.array([emb.vectors[n] for n in names]))
    assert spearmanr(latent, bag).statistic >= 0.8


@pytest.mark.parametrize("bad", [
    {"n_treatments": 1}, {"n_patients": 3, "n_treatments": 5}, {"noise_sd": -0.1},
    {"layout": "grid"}, {"effect_shape": "cubic"}, {"pair_separation": (0.5, 0.1)},
    {"covariate_effect": (0.1,)},
])
def test_invalid_configs(bad):
    with pytest.raises(InfeasibleConfig):
        SynthConfig(**bad)


def test_saturated_targets_rejected():
    with pytest.raises(InfeasibleConfig, match="saturates"):
        generate_synthetic(SynthConfig(n_patients=50, intercept=3.0, noise_sd=0.0))


def test_pairs_layout():
    cfg = preset_config("positive", seed=0)
    latent, centres = draw_latent(cfg, np.random.default_rng(0))
    assert latent.shape == (cfg.n_treatments, cfg.true_embedding_dim)
    n_pairs = (cfg.n_treatments - cfg.n_singletons) // 2
    assert len(centres) == n_pairs + cfg.n_singletons
    nn = np.sort(np.linalg.norm(latent[:, None] - latent[None], axis=-1), axis=1)[:, 1]
    lo, hi = cfg.pair_separation
    assert np.sum(nn <= hi + 1e-12) >= 2 * n_pairs


def test_presets():
    assert preset_config("null").effect_strength == 0.0
    assert preset_config("positive", seed=4).seed == 4
    assert {k: v for k, v in PRESETS["null"].items() if k != "effect_strength"} == \
        {k: v for k, v in PRESETS["positive"].items() if k != "effect_strength"}
    with pytest.raises(KeyError):
        preset_config("strong")
    data = generate_synthetic(preset_config("null", n_patients=100))
    assert set(data.true_effects.values()) == {0.0}
