"""Evaluation: STS scoring by Spearman correlation, hypersphere
alignment/uniformity metrics, and the LayerNorm norm probe.

Alignment and uniformity use the standard hypersphere definitions with
alpha = 2 and t = 2; embeddings are L2-normalized internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import spearmanr

from .data import make_batch
from .encoder import strip_layernorms
from .errors import DataError

ALIGNMENT_ALPHA = 2
UNIFORMITY_T = 2


def spearman(pred, gold):
    """Spearman rank correlation with average ranks for ties."""
    pred = np.asarray(pred, dtype=float)
    gold = np.asarray(gold, dtype=float)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise DataError("spearman needs two equal-length 1-d sequences")
    if pred.size < 2:
        raise DataError("spearman undefined for fewer than 2 points")
    if np.all(pred == pred[0]) or np.all(gold == gold[0]):
        raise DataError("spearman undefined for a constant sequence")
    rho = spearmanr(pred, gold).statistic
    return float(rho)


def cosine_matrix_rows(A, B):
    """Cosine between corresponding rows of A and B."""
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DataError("cannot score a zero-norm embedding")
    return np.clip((A * B).sum(axis=1) / (na * nb), -1.0, 1.0)


def sts_eval(embed_fn, dataset):
    """Spearman of embedding-cosine predictions against gold scores.

    ``embed_fn`` maps a list of sentences to an (n, d) array.
    """
    if not dataset:
        raise DataError("empty STS dataset")
    if len(dataset) < 2:
        raise DataError("Spearman needs at least 2 pairs")
    A = embed_fn([p.sentence_a for p in dataset])
    B = embed_fn([p.sentence_b for p in dataset])
    pred = cosine_matrix_rows(np.asarray(A, dtype=float), np.asarray(B, dtype=float))
    gold = np.asarray([p.gold_score for p in dataset], dtype=float)
    return spearman(pred, gold)


def _normalize_rows(X):
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataError("cannot normalize a zero-norm embedding")
    return X / norms


def alignment(X, X_plus, alpha=ALIGNMENT_ALPHA):
    """Mean ||f(x) - f(x+)||^alpha over positive pairs (normalized)."""
    X, X_plus = np.atleast_2d(X), np.atleast_2d(X_plus)
    if X.size == 0:
        raise DataError("alignment of an empty set")
    Xn, Xpn = _normalize_rows(X), _normalize_rows(X_plus)
    return float(np.mean(np.linalg.norm(Xn - Xpn, axis=1) ** alpha))


def uniformity(X, t=UNIFORMITY_T):
    """log mean over distinct pairs of exp(-t ||f(x) - f(y)||^2) (normalized)."""
    X = np.atleast_2d(X)
    if X.shape[0] < 2:
        raise DataError("uniformity needs at least 2 embeddings")
    d2 = pdist(_normalize_rows(X), metric="sqeuclidean")
    return float(np.log(np.mean(np.exp(-t * d2))))


@dataclass
class ProbeRow:
    stripped: int
    mean_hl: float
    std_hl: float
    cv_hl: float
    mean_hp: float
    std_hp: float
    cv_hp: float


def norm_probe(encoder, sentences, strip_counts, vocab, batch_size=50):
    """Norm statistics of h^L and h^P under LayerNorm stripping.

    For each requested strip count the last n LayerNorms are replaced by
    identity and mean/std/CV of the embedding norms over the sentences are
    reported.
    """
    if len(set(sentences)) < 100:
        raise DataError("norm probe needs at least 100 distinct sentences")
    rows = []
    for n in strip_counts:
        enc = strip_layernorms(encoder, n)
        hl_norms, hp_norms = [], []
        for start in range(0, len(sentences), batch_size):
            batch = make_batch(vocab, sentences[start:start + batch_size],
                               encoder.config.max_seq_len)
            out = enc.encode(batch, train_mode=False)
            hl_norms.append(np.linalg.norm(out.last_hidden.data, axis=1))
            hp_norms.append(np.linalg.norm(out.pooler.data, axis=1))
        hl = np.concatenate(hl_norms)
        hp = np.concatenate(hp_norms)
        rows.append(ProbeRow(
            stripped=int(n),
            mean_hl=float(hl.mean()), std_hl=float(hl.std()),
            cv_hl=float(hl.std() / hl.mean()),
            mean_hp=float(hp.mean()), std_hp=float(hp.std()),
            cv_hp=float(hp.std() / hp.mean()),
        ))
    return rows


@dataclass
class EvalReport:
    per_dataset: dict = field(default_factory=dict)   # name -> Spearman rho
    alignment: float | None = None
    uniformity: float | None = None
    probe_rows: list = field(default_factory=list)

    @property
    def average_rho(self):
        if not self.per_dataset:
            return None
        return float(np.mean(list(self.per_dataset.values())))

    def to_text(self):
        lines = ["TNCSE evaluation report",
                 f"alignment/uniformity constants: alpha={ALIGNMENT_ALPHA} t={UNIFORMITY_T}"]
        for name, rho in self.per_dataset.items():
            lines.append(f"spearman {name} {rho:.6f}")
        if self.per_dataset:
            lines.append(f"spearman avg {self.average_rho:.6f}")
        if self.alignment is not None:
            lines.append(f"alignment {self.alignment:.6f}")
        if self.uniformity is not None:
            lines.append(f"uniformity {self.uniformity:.6f}")
        for r in self.probe_rows:
            lines.append(f"probe stripped={r.stripped} mean_hl={r.mean_hl:.6f} "
                         f"cv_hl={r.cv_hl:.6f} mean_hp={r.mean_hp:.6f} cv_hp={r.cv_hp:.6f}")
        return "\n".join(lines) + "\n"

    def to_kv(self):
        kv = {}
        for name, rho in self.per_dataset.items():
            kv[f"spearman.{name}"] = rho
        if self.per_dataset:
            kv["spearman.avg"] = self.average_rho
        if self.alignment is not None:
            kv["alignment"] = self.alignment
        if self.uniformity is not None:
            kv["uniformity"] = self.uniformity
        return kv


def probe_csv(rows):
    lines = ["stripped,mean_hl,std_hl,cv_hl,mean_hp,std_hp,cv_hp"]
    for r in rows:
        lines.append(f"{r.stripped},{r.mean_hl},{r.std_hl},{r.cv_hl},"
                     f"{r.mean_hp},{r.std_hp},{r.cv_hp}")
    return "\n".join(lines) + "\n"
