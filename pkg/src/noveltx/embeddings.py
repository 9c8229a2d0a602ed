"""Treatment vector representations and embedding-space distances."""
from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

METHODS = ("one_hot", "smiles", "kegg")


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        """Sorted vocabulary over the distinct tokens."""
        return cls(tuple(sorted(set(tokens))))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int | None:
        return self._index.get(token)


@dataclass
class TreatmentEmbedding:
    method: str
    vectors: dict[str, np.ndarray]
    dim: int

    def __post_init__(self):
        for name, v in self.vectors.items():
            if len(v) != self.dim:
                raise ValueError(f"{name}: vector length {len(v)} != dim {self.dim}")

    def __contains__(self, treatment):
        return treatment in self.vectors

    def matrix(self, treatments: Sequence[str]) -> np.ndarray:
        return np.array([self.vectors[t] for t in treatments], dtype=float).reshape(
            len(treatments), self.dim)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["treatment", "method", "dim"] + [f"v{j}" for j in range(self.dim)])
            for name in sorted(self.vectors):
                w.writerow([name, self.method, self.dim] + [repr(float(x)) for x in self.vectors[name]])

    @classmethod
    def from_csv(cls, path) -> "TreatmentEmbedding":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["treatment", "method", "dim"]:
                raise ValueError(f"{path}: not an embedding file")
            method = None
            dim = len(header) - 3
            vectors = {}
            for row in reader:
                if not row:
                    continue
                if method is None:
                    method = row[1]
                elif row[1] != method:
                    raise ValueError(f"{path}: mixed methods {method!r} and {row[1]!r}")
                if int(row[2]) != dim:
                    raise ValueError(f"{path}: row dim {row[2]} != header dim {dim}")
                vectors[row[0]] = np.array([float(x) for x in row[3:]])
        if method is None:
            raise ValueError(f"{path}: no rows")
        return cls(method, vectors, dim)


# ---------------------------------------------------------------- one-hot

def one_hot_embed(treatment: str, vocabulary: Vocabulary) -> np.ndarray:
    """Indicator over the training vocabulary; unseen treatments get all zeros."""
    v = np.zeros(len(vocabulary))
    i = vocabulary.index(treatment)
    if i is not None:
        v[i] = 1.0
    return v


# ---------------------------------------------------------------- SMILES

def smiles_featurize(smiles: str, n: int = 3, dim: int = 512) -> np.ndarray:
    """Character n-gram counts hashed into ``dim`` buckets by CRC-32 of the UTF-8 n-gram.

    Deterministic across runs, processes and platforms (no salted ``hash``).
    """
    if not smiles:
        raise ValueError("empty SMILES string")
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be >= 1")
    v = np.zeros(dim)
    for i in range(len(smiles) - n + 1):
        v[zlib.crc32(smiles[i:i + n].encode("utf-8")) % dim] += 1.0
    return v


# ---------------------------------------------------------------- KEGG bag of tokens

def kegg_bag_embed(tokens_per_drug: Mapping[str, Iterable[str]],
                   vocab: Vocabulary | None = None) -> tuple[list[str], Vocabulary, np.ndarray]:
    """Count matrix (drugs x vocab); entry = token multiplicity for the drug."""
    drugs = list(tokens_per_drug)
    counts = {d: Counter(tokens_per_drug[d]) for d in drugs}
    if vocab is None:
        vocab = Vocabulary.from_tokens(t for c in counts.values() for t in c)
    M = np.zeros((len(drugs), len(vocab)))
    for i, d in enumerate(drugs):
        for tok, c in counts[d].items():
            j = vocab.index(tok)
            if j is not None:
                M[i, j] = c
    return drugs, vocab, M


def tfidf_transform(counts) -> np.ndarray:
    """Smoothed TF-IDF with L2 row normalisation.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1, where the N rows act as the corpus.
    """
    C = np.asarray(counts, dtype=float)
    if C.ndim != 2 or C.shape[0] < 1:
        raise ValueError("counts must be a 2-D matrix with at least one row")
    if np.any(C < 0):
        raise ValueError("counts must be nonnegative")
    N = C.shape[0]
    df = np.count_nonzero(C > 0, axis=0)
    idf = np.log((1.0 + N) / (1.0 + df)) + 1.0
    W = C * idf
    norms = np.linalg.norm(W, axis=1)
    nz = norms > 0
    W[nz] /= norms[nz, None]
    return W


# ---------------------------------------------------------------- PCA

@dataclass
class PCAModel:
    mean: np.ndarray
    basis: np.ndarray  # (d, k), orthonormal columns
    eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.basis

    def inverse_transform(self, scores) -> np.ndarray:
        return self.mean + np.asarray(scores, dtype=float) @ self.basis.T

    def to_json(self) -> str:
        return json.dumps({
            "mean": self.mean.tolist(),
            "basis": self.basis.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "PCAModel":
        data = json.loads(text)
        return cls(np.asarray(data["mean"], dtype=float),
                   np.asarray(data["basis"], dtype=float).reshape(len(data["mean"]), -1),
                   np.asarray(data["eigenvalues"], dtype=float))


def pca_fit_transform(X, k: int) -> tuple[np.ndarray, PCAModel]:
    """Project mean-centred rows onto the top-``k`` covariance eigenvectors.

    Eigenvalues come back nonincreasing. Each basis vector is signed so its
    largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside [1, {min(n - 1, d)}] for a {n}x{d} matrix")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:k]
    vals = np.clip(vals[order], 0.0, None)
    basis = vecs[:, order]
    for j in range(k):
        if basis[np.argmax(np.abs(basis[:, j])), j] < 0:
            basis[:, j] = -basis[:, j]
    return Xc @ basis, PCAModel(mean, basis, vals)


# ---------------------------------------------------------------- novelty distances

@dataclass(frozen=True)
class NoveltyFeatures:
    min_eucl: float
    min_cosine: float
    eucl_to_mean: float
    cosine_to_mean: float


def cosine_distance(a, b) -> float:
    """1 - cosine similarity; a zero vector is treated as orthogonal (distance 1)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        logger.debug("cosine distance with a zero vector; using 1.0")
        return 1.0
    sim = float(a @ b) / (na * nb)
    return 1.0 - min(1.0, max(-1.0, sim))


def novelty_features(unseen, train_vectors: Sequence, all_vectors: Sequence | None = None) -> NoveltyFeatures:
    """Nearest-neighbour and centre-of-gravity distances for a held-out treatment.

    ``all_vectors`` defaults to ``train_vectors`` plus ``unseen``; the mean is
    taken over it, so the held-out treatment pulls the centre towards itself.
    """
    u = np.asarray(unseen, dtype=float)
    train = [np.asarray(v, dtype=float) for v in train_vectors]
    if not train:
        raise ValueError("need at least one training vector")
    if all_vectors is None:
        all_vectors = train + [u]
    centre = np.mean(np.asarray(all_vectors, dtype=float), axis=0)
    return NoveltyFeatures(
        min_eucl=min(float(np.linalg.norm(u - v)) for v in train),
        min_cosine=min(cosine_distance(u, v) for v in train),
        eucl_to_mean=float(np.linalg.norm(u - centre)),
        cosine_to_mean=cosine_distance(u, centre),
    )


# ---------------------------------------------------------------- builders

def one_hot_embedding(treatments: Iterable[str]) -> TreatmentEmbedding:
    vocab = Vocabulary.from_tokens(treatments)
    return TreatmentEmbedding("one_hot", {t: one_hot_embed(t, vocab) for t in vocab.tokens},
                              len(vocab))


def smiles_embedding(smiles_by_treatment: Mapping[str, str | None], pca_k: int = 3,
                     n: int = 3, hash_dim: int = 512) -> tuple[TreatmentEmbedding, PCAModel]:
    """Hashed n-gram counts reduced by PCA; treatments without SMILES are left out."""
    names = sorted(t for t, s in smiles_by_treatment.items() if s)
    skipped = sorted(t for t, s in smiles_by_treatment.items() if not s)
    if skipped:
        logger.info("no SMILES for %s; excluded from the smiles embedding", ", ".join(skipped))
    X = np.array([smiles_featurize(smiles_by_treatment[t], n, hash_dim) for t in names])
    scores, model = pca_fit_transform(X, pca_k)
    return TreatmentEmbedding("smiles", dict(zip(names, scores)), pca_k), model


def kegg_embedding(tokens_by_drug: Mapping[str, Sequence[str]], drug_of_treatment: Mapping[str, str],
                   pca_k: int = 3, reduce: bool = True) -> tuple[TreatmentEmbedding, PCAModel | None]:
    """Bag of KEGG tokens, TF-IDF weighted, then PCA over every drug in ``tokens_by_drug``.

    ``tokens_by_drug`` may include linked drugs beyond the study treatments;
    they shape the TF-IDF weights and PCA basis but get no treatment vector.
    """
    drugs = sorted(tokens_by_drug)
    _, _, counts = kegg_bag_embed({d: tokens_by_drug[d] for d in drugs})
    W = tfidf_transform(counts)
    model = None
    if reduce:
        W, model = pca_fit_transform(W, pca_k)
    row = {d: i for i, d in enumerate(drugs)}
    vectors = {}
    for treatment, code in sorted(drug_of_treatment.items()):
        if code in row:
            vectors[treatment] = W[row[code]].copy()
        else:
            logger.warning("no KEGG tokens for %s (%s)", treatment, code)
    return TreatmentEmbedding("kegg", vectors, W.shape[1]), model


def pairwise_distances(vectors: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - vectors[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def nearest_neighbour_distances(embedding: TreatmentEmbedding,
                                treatments: Sequence[str]) -> dict[str, float]:
    X = embedding.matrix(treatments)
    D = pairwise_distances(X)
    np.fill_diagonal(D, math.inf)
    return {t: float(D[i].min()) for i, t in enumerate(treatments)}
