"""Synthetic cohort with known treatment effects, for end-to-end checks.

Each treatment gets a latent vector ``z`` in ``[-1, 1]^dim``; its effect on
the steroid-burden target is ``gamma * g(z)``. Patients get a treatment, a
few diagnosis/steroid histories and one treatment block whose target-window
steroid coverage realises

    clip(intercept + beta . x + gamma * g(z) + noise, 0, 1)

to the nearest whole day.

The KEGG-format cache written next to the events encodes latent geometry
in token sets: every latent coordinate ``z_j`` becomes a thermometer code
over a pool of synthetic diseases (``round(K(1+z_j))`` of the "up" pool and
the complement of the "down" pool), so drugs close in latent space share
most diseases and co-linked drugs.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import StudyConfig, save_study
from .features import FeatureSpec, Window
from .ingest import (Demographics, EventKind, EventRecord, TreatmentCatalogEntry,
                     write_demographics, write_events, write_treatment_catalog)

logger = logging.getLogger(__name__)

EFFECT_SHAPES = ("linear", "radial", "field", "clusters")
LAYOUTS = ("uniform", "pairs")
STEROID_CODES = ("H02AB06", "H02AB07")
UC_CODE = "K51.90"
BRONCHITIS_CODE = "J20.9"
PANNICULITIS_CODE = "M79.3"
FILL_DAYS = 30
INDICATION = "H90000"


class InfeasibleConfig(ValueError):
    pass


@dataclass
class SynthConfig:
    n_patients: int = 2000
    n_treatments: int = 8
    true_embedding_dim: int = 2
    effect_strength: float = 0.3
    # bronchitis (last 6 months), panniculitis (last 6 months), prior steroid fills
    covariate_effect: tuple[float, float, float] = (0.15, 0.10, 0.03)
    intercept: float = 0.3
    noise_sd: float = 0.05
    seed: int = 0
    effect_shape: str = "linear"
    radial_width: float = 0.5
    field_lengthscale: float = 0.4
    layout: str = "uniform"
    pair_separation: tuple[float, float] = (0.05, 0.8)
    # pairs layout: isolated treatments, box half-width for pair centres, min centre gap
    n_singletons: int = 0
    core_radius: float = 1.0
    centre_spacing: float = 0.0
    n_reference_drugs: int = 4
    levels: int = 25  # thermometer resolution: 2*levels diseases per pool
    onset_days: int = 28
    washout_days: int = 30

    def __post_init__(self):
        if self.n_treatments < 2:
            raise InfeasibleConfig("n_treatments must be >= 2")
        if self.n_patients < self.n_treatments:
            raise InfeasibleConfig("n_patients must be >= n_treatments")
        if self.noise_sd < 0:
            raise InfeasibleConfig("noise_sd must be >= 0")
        if not 1 <= self.true_embedding_dim <= 9:
            raise InfeasibleConfig("true_embedding_dim must be in 1..9")
        if not 1 <= self.levels <= 50:
            raise InfeasibleConfig("levels must be in 1..50")
        if self.layout not in LAYOUTS:
            raise InfeasibleConfig(f"layout must be one of {LAYOUTS}")
        lo, hi = self.pair_separation
        if not 0 < lo <= hi:
            raise InfeasibleConfig("pair_separation must satisfy 0 < min <= max")
        self.pair_separation = (float(lo), float(hi))
        if self.centre_spacing < 0:
            raise InfeasibleConfig("centre_spacing must be >= 0")
        if not 0 < self.core_radius <= 1:
            raise InfeasibleConfig("core_radius must be in (0, 1]")
        if not 0 <= self.n_singletons <= self.n_treatments:
            raise InfeasibleConfig("n_singletons must be in 0..n_treatments")
        if self.effect_shape not in EFFECT_SHAPES:
            raise InfeasibleConfig(f"effect_shape must be one of {EFFECT_SHAPES}")
        if len(self.covariate_effect) != 3:
            raise InfeasibleConfig("covariate_effect needs 3 entries (bronchitis, panniculitis, prior steroids)")
        if self.n_treatments + self.n_reference_drugs > 9999:
            raise InfeasibleConfig("too many drugs for the synthetic code range")
        self.covariate_effect = tuple(float(b) for b in self.covariate_effect)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        data = dict(data)
        for key in ("covariate_effect", "pair_separation"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


# Two tight pairs near the middle plus four isolated treatments, each cluster
# carrying a signed bump of the effect. Close neighbours share effects, isolated
# treatments do not, so the embedding helps exactly where treatments are not novel.
PRESETS = {
    "positive": {
        "effect_shape": "clusters", "layout": "pairs", "effect_strength": 0.2,
        "radial_width": 0.25, "n_singletons": 4, "core_radius": 0.5, "centre_spacing": 0.7,
        "pair_separation": (0.02, 0.1), "intercept": 0.35,
    },
}
PRESETS["null"] = dict(PRESETS["positive"], effect_strength=0.0)


def preset_config(name: str, **overrides) -> SynthConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SynthConfig.from_dict({**PRESETS[name], **overrides})


N_FOURIER = 256


def random_field(dim: int, lengthscale: float, rng: np.random.Generator):
    """Smooth random function with unit prior variance and squared-exponential correlation.

    Random Fourier features: ``sqrt(2/m) * sum cos(w.z + b)`` with
    ``w ~ N(0, I/lengthscale^2)``, ``b ~ U(0, 2pi)``.
    """
    W = rng.normal(0.0, 1.0 / lengthscale, size=(N_FOURIER, dim))
    b = rng.uniform(0.0, 2.0 * np.pi, N_FOURIER)

    def g(z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.sqrt(2.0 / N_FOURIER) * np.cos(z @ W.T + b).sum(axis=1)
    return g


def signed_bumps(centres: np.ndarray, signs: np.ndarray, width: float):
    """Sum of Gaussian bumps ``s_k * exp(-|z - c_k|^2 / (2 width^2))``."""
    centres = np.atleast_2d(np.asarray(centres, dtype=float))
    signs = np.asarray(signs, dtype=float)

    def g(z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        d2 = ((z[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / (2.0 * width * width)) @ signs
    return g


def balanced_signs(k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` signs, half +1 and half -1 (one extra +1 when odd), in random order."""
    return rng.permutation(np.where(np.arange(k) % 2 == 0, 1.0, -1.0))


def effect_function(z: np.ndarray, shape: str = "linear", width: float = 0.5, field=None) -> np.ndarray:
    """``g`` applied row-wise.

    linear: first coordinate; radial: Gaussian bump at the origin with the
    given width; field and clusters: the supplied function (see
    ``random_field`` and ``signed_bumps``).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if shape == "linear":
        return z[:, 0].copy()
    if shape == "radial":
        return np.exp(-np.sum(z * z, axis=1) / (2.0 * width * width))
    if shape in ("field", "clusters"):
        if field is None:
            raise ValueError(f"{shape} shape needs a function")
        return field(z)
    raise ValueError(f"unknown effect shape {shape!r}")


@dataclass
class SynthData:
    config: SynthConfig
    events: list[EventRecord]
    demographics: list[Demographics]
    catalog: list[TreatmentCatalogEntry]
    study: StudyConfig
    true_effects: dict[str, float]
    true_embeddings: dict[str, np.ndarray]
    kegg_entries: dict[str, str]
    patients: list[dict] = field(default_factory=list)

    def truth(self) -> dict:
        return {
            "config": asdict(self.config),
            "effects": self.true_effects,
            "latent": {k: [float(x) for x in v] for k, v in self.true_embeddings.items()},
            "patients": self.patients,
        }


def treatment_name(i: int) -> str:
    return f"synth_{i + 1:02d}"


def _drug_code(i: int) -> str:
    return f"D9{i + 1:04d}"


def _pool_disease(dim: int, sign: int, level: int, levels: int) -> str:
    # H9 + dim(1 digit) + sign(0/1) + level(2 digits); levels < 50 keeps it 5 digits
    return f"H9{dim % 10}{sign}{level:02d}"


def thermometer_levels(z: np.ndarray, levels: int) -> np.ndarray:
    return np.clip(np.rint(levels * (1.0 + np.asarray(z))), 0, 2 * levels).astype(int)


def _drug_diseases(z: np.ndarray, levels: int) -> list[str]:
    out = [INDICATION]
    for j, c in enumerate(thermometer_levels(z, levels)):
        out.extend(_pool_disease(j, 0, i, levels) for i in range(c))
        out.extend(_pool_disease(j, 1, i, levels) for i in range(2 * levels - c))
    return out


def _fake_smiles(rng: np.random.Generator) -> str:
    frags = ["C", "C", "CC", "N", "O", "C(=O)", "c1ccccc1", "C(N)", "S", "Cl", "F"]
    return "".join(rng.choice(frags, size=int(rng.integers(4, 12))))


def _spaced_points(n_core: int, n_outer: int, d: int, core_radius: float, spacing: float,
                   rng: np.random.Generator, tries: int = 200) -> np.ndarray:
    """``n_core`` points in ``[-core_radius, core_radius]^d`` then ``n_outer`` in ``[-1, 1]^d``,
    all pairwise at least ``spacing`` apart (sequential rejection, restarted on a dead end)."""
    bounds = [core_radius] * n_core + [1.0] * n_outer
    for _ in range(tries):
        pts: list[np.ndarray] = []
        for r in bounds:
            for _ in range(500):
                p = rng.uniform(-r, r, size=d)
                if all(np.linalg.norm(p - q) >= spacing for q in pts):
                    pts.append(p)
                    break
            else:
                break
        if len(pts) == len(bounds):
            return np.array(pts).reshape(len(bounds), d)
    raise InfeasibleConfig(f"could not place {len(bounds)} centres {spacing} apart in [-1, 1]^{d}")


def draw_latent(config: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Latent treatment vectors and the cluster centres they were drawn around.

    uniform: independent draws from ``[-1, 1]^dim`` (each point is its own
    centre). pairs: ``n_singletons`` isolated treatments (one more if the
    remainder is odd) and pairs for the rest. Pair centres lie in
    ``[-core_radius, core_radius]^dim``, singletons anywhere in
    ``[-1, 1]^dim``, all centres at least ``centre_spacing`` apart. Partners
    are split along a random direction by separations spaced geometrically
    over ``pair_separation``. Rows are shuffled so names carry no structure.
    """
    T, d = config.n_treatments, config.true_embedding_dim
    if config.layout == "uniform":
        Z = rng.uniform(-1.0, 1.0, size=(T, d))
        return Z, Z.copy()
    n_pairs = (T - config.n_singletons) // 2
    n_single = T - 2 * n_pairs
    centres = _spaced_points(n_pairs, n_single, d, config.core_radius, config.centre_spacing, rng)
    if n_pairs > 1:
        seps = np.geomspace(*config.pair_separation, n_pairs)
    else:
        seps = np.array([config.pair_separation[0]] * n_pairs)
    u = rng.normal(size=(n_pairs, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    half = 0.5 * seps[:, None] * u
    Z = np.vstack([centres[:n_pairs] + half, centres[:n_pairs] - half, centres[n_pairs:]])
    return Z[rng.permutation(T)], centres


def _kegg_drug_text(code: str, name: str, diseases: list[str], disease_names: dict[str, str]) -> str:
    lines = [f"{'ENTRY':<12}{code:<28}Drug", f"{'NAME':<12}{name}",
             f"{'EFFICACY':<12}Anti-inflammatory, Synthetic agent"]
    for k, h in enumerate(diseases):
        lead = "  DISEASE   " if k == 0 else " " * 12
        lines.append(f"{lead}{disease_names[h]} [DS:{h}]")
    lines.append(f"{'CLASS':<12}Synthetic agents")
    lines.append(f"{'':<12}DG90000  Synthetic drug group")
    lines.append("///")
    return "\n".join(lines) + "\n"


def _kegg_disease_text(code: str, name: str, drugs: list[tuple[str, str]]) -> str:
    lines = [f"{'ENTRY':<12}{code:<28}Disease", f"{'NAME':<12}{name}"]
    for k, (dcode, dname) in enumerate(drugs):
        lead = f"{'DRUG':<12}" if k == 0 else " " * 12
        lines.append(f"{lead}{dname} [DR:{dcode}]")
    lines.append("///")
    return "\n".join(lines) + "\n"


def _synthetic_kegg(latent: dict[str, np.ndarray], names: dict[str, str], levels: int) -> dict[str, str]:
    """Flat-file text for every drug and every disease it links to."""
    diseases = {code: _drug_diseases(z, levels) for code, z in latent.items()}
    linked: dict[str, list[str]] = {}
    for code in sorted(diseases):
        for h in diseases[code]:
            linked.setdefault(h, []).append(code)
    disease_names = {h: ("Synthetic colitis" if h == INDICATION else f"Synthetic condition {h}")
                     for h in linked}
    out = {}
    for code in sorted(diseases):
        out[code] = _kegg_drug_text(code, names[code], diseases[code], disease_names)
    for h in sorted(linked):
        out[h] = _kegg_disease_text(h, disease_names[h], [(c, names[c]) for c in linked[h]])
    return out


def _synthetic_drugs(config: SynthConfig, names, latent, ref_latent):
    T = len(names)
    drug_latent = {_drug_code(i): latent[i] for i in range(T)}
    drug_names = {_drug_code(i): names[i] for i in range(T)}
    for r in range(config.n_reference_drugs):
        code = _drug_code(T + r)
        drug_latent[code] = ref_latent[r]
        drug_names[code] = f"synth_ref_{r + 1:02d}"
    return drug_latent, drug_names


def _day(d: dt.date, offset: int) -> dt.date:
    return d + dt.timedelta(days=int(offset))


def study_config(config: SynthConfig, names: Sequence[str] | None = None) -> StudyConfig:
    if names is None:
        names = [treatment_name(i) for i in range(config.n_treatments)]
    codes = {f"SYN{i + 1:03d}": name for i, name in enumerate(names)}
    features = [
        FeatureSpec("bronchitis_6m", "binary_presence", frozenset([BRONCHITIS_CODE]), Window.parse("last_6_months")),
        FeatureSpec("panniculitis_6m", "binary_presence", frozenset([PANNICULITIS_CODE]), Window.parse("last_6_months")),
        FeatureSpec("prior_steroid_fills", "count", frozenset(STEROID_CODES), Window.parse("lifetime")),
        FeatureSpec("uc_dx_12m", "count", frozenset([UC_CODE]), Window.parse("last_12_months")),
    ]
    return StudyConfig(codes, list(STEROID_CODES), config.onset_days, config.washout_days, features)


def generate_synthetic(config: SynthConfig,
                       catalog: Sequence[TreatmentCatalogEntry] | None = None) -> SynthData:
    """Events, demographics, catalog, study config and ground truth for ``config``.

    With ``catalog`` the treatments are taken from it (names, KEGG codes,
    SMILES) and no synthetic KEGG entries are produced; latent vectors and
    effects are still drawn at random.
    """
    if catalog is not None:
        catalog = list(catalog)
        config = replace(config, n_treatments=len(catalog))
    rng = np.random.default_rng(config.seed)
    T = config.n_treatments
    names = [e.generic_name for e in catalog] if catalog is not None else [treatment_name(i) for i in range(T)]
    study = study_config(config, names)
    code_of = {name: code for code, name in study.treatment_codes.items()}

    latent, centres = draw_latent(config, rng)
    ref_latent = rng.uniform(-1.0, 1.0, size=(config.n_reference_drugs, config.true_embedding_dim))
    field = None
    if config.effect_shape == "field":
        field = random_field(config.true_embedding_dim, config.field_lengthscale,
                             np.random.default_rng([config.seed, 1]))
    elif config.effect_shape == "clusters":
        signs = balanced_signs(len(centres), np.random.default_rng([config.seed, 2]))
        field = signed_bumps(centres, signs, config.radial_width)
    g = effect_function(latent, config.effect_shape, config.radial_width, field)
    effects = config.effect_strength * g

    if catalog is None:
        kegg_entries = _synthetic_kegg(*_synthetic_drugs(config, names, latent, ref_latent), config.levels)
        catalog = [TreatmentCatalogEntry(names[i], "Synthetic", _drug_code(i), _fake_smiles(rng))
                   for i in range(T)]
    else:
        kegg_entries = {}

    n = config.n_patients
    beta = np.asarray(config.covariate_effect)
    treat = rng.integers(0, T, n)
    ages = rng.integers(18, 80, n)
    genders = rng.choice(np.array(["F", "M"]), n)
    bron = rng.random(n) < 0.2
    pann = rng.random(n) < 0.1
    prior = np.minimum(rng.poisson(1.0, n), 4)
    n_fills = rng.integers(4, 9, n)
    start_offsets = rng.integers(0, 4 * 365, n)
    noise = rng.normal(0.0, config.noise_sd, n) if config.noise_sd > 0 else np.zeros(n)
    expected = config.intercept + np.column_stack([bron, pann, prior]).astype(float) @ beta + effects[treat]
    raw = expected + noise
    clipped = (raw < 0) | (raw > 1)
    if clipped.all():
        raise InfeasibleConfig(
            f"every target saturates outside [0, 1] (mean unclipped value {raw.mean():.3f}); "
            "lower the intercept or effect sizes")
    if clipped.mean() > 0.2:
        logger.warning("%.0f%% of synthetic targets are clipped", 100 * clipped.mean())
    target = np.clip(raw, 0.0, 1.0)

    base = dt.date(2016, 1, 1)
    events: list[EventRecord] = []
    people: list[Demographics] = []
    patients = []
    onset = config.onset_days
    for p in range(n):
        pid = f"P{p + 1:06d}"
        start = _day(base, start_offsets[p])
        birth = dt.date(start.year - int(ages[p]), 1, 1) + dt.timedelta(days=int(rng.integers(0, 365)))
        people.append(Demographics(pid, birth, str(genders[p])))
        ev = []
        for _ in range(int(rng.integers(1, 4))):
            ev.append(EventRecord(pid, _day(start, -rng.integers(1, 700)), EventKind.DIAGNOSIS, UC_CODE))
        if bron[p]:
            ev.append(EventRecord(pid, _day(start, -rng.integers(1, 170)), EventKind.DIAGNOSIS, BRONCHITIS_CODE))
        elif rng.random() < 0.2:
            # older episode, outside the 6-month lookback
            ev.append(EventRecord(pid, _day(start, -rng.integers(200, 700)), EventKind.DIAGNOSIS, BRONCHITIS_CODE))
        if pann[p]:
            ev.append(EventRecord(pid, _day(start, -rng.integers(1, 170)), EventKind.DIAGNOSIS, PANNICULITIS_CODE))
        for k in range(int(prior[p])):
            ev.append(EventRecord(pid, _day(start, -60 - 45 * k), EventKind.PRESCRIPTION,
                                  STEROID_CODES[k % 2], 14, 28.0))
        code = code_of[names[treat[p]]]
        m = int(n_fills[p])
        for k in range(m):
            ev.append(EventRecord(pid, _day(start, FILL_DAYS * k), EventKind.PRESCRIPTION, code, FILL_DAYS, 30.0))
        end_off = FILL_DAYS * m
        window = end_off - onset  # target days are onset+1 .. end_off
        if rng.random() < 0.3:
            # steroid started inside the onset window; excluded from the target
            d0 = int(rng.integers(0, onset // 2))
            ev.append(EventRecord(pid, _day(start, d0), EventKind.PRESCRIPTION, STEROID_CODES[0],
                                  onset + 1 - d0, float(onset + 1 - d0)))
        covered = int(round(target[p] * window))
        first = onset + 1 + int(rng.integers(0, window - covered + 1))
        k = 0
        while k < covered:
            supply = min(FILL_DAYS, covered - k)
            ev.append(EventRecord(pid, _day(start, first + k), EventKind.PRESCRIPTION,
                                  STEROID_CODES[1], supply, float(supply)))
            k += supply
        events.extend(ev)
        patients.append({"patient_id": pid, "treatment": names[treat[p]],
                         "expected": float(expected[p]), "target": covered / window})

    events.sort(key=lambda e: (e.patient_id, e.date))
    return SynthData(
        config=config,
        events=events,
        demographics=people,
        catalog=catalog,
        study=study,
        true_effects={names[i]: float(effects[i]) for i in range(T)},
        true_embeddings={names[i]: latent[i].copy() for i in range(T)},
        kegg_entries=kegg_entries,
        patients=patients,
    )


def write_synthetic(data: SynthData, outdir) -> dict[str, Path]:
    """Write events, patients, catalog, study config, KEGG cache and truth file."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out / "events.csv",
        "patients": out / "patients.csv",
        "catalog": out / "catalog.csv",
        "study": out / "study.json",
        "truth": out / "truth.json",
        "kegg_cache": out / "kegg_cache",
    }
    write_events(data.events, paths["events"])
    write_demographics(data.demographics, paths["patients"])
    write_treatment_catalog(data.catalog, paths["catalog"])
    save_study(data.study, paths["study"])
    paths["truth"].write_text(json.dumps(data.truth(), indent=1, sort_keys=True) + "\n")
    if data.kegg_entries:
        paths["kegg_cache"].mkdir(exist_ok=True)
    else:
        del paths["kegg_cache"]
    for code, text in data.kegg_entries.items():
        (paths["kegg_cache"] / code).write_text(text, encoding="utf-8")
    return paths
