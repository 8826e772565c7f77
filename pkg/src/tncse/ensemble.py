"""Sum-ensemble inference over K encoders and teacher-to-student
distillation.

The default distillation objective regresses the student's per-batch
pairwise cosine-similarity matrix onto the frozen teacher's (off-diagonal
MSE); a direct embedding-regression variant is available behind
``objective="regression"`` and requires matching hidden dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import batch_iter, make_batch
from .encoder import Encoder
from .errors import ConfigError, DataError, NumericError
from .evaluation import sts_eval
from .training import Adam, TrainLog, ensemble_embed_fn


class EnsembleModel:
    """K >= 1 encoders over a shared vocabulary, summed at inference."""

    def __init__(self, encoders):
        if not encoders:
            raise ValueError("an ensemble needs at least one encoder")
        dims = {enc.config.hidden_dim for enc in encoders}
        if len(dims) > 1:
            raise ValueError(f"member hidden dims differ: {sorted(dims)}")
        hashes = {enc.vocab_hash for enc in encoders if enc.vocab_hash is not None}
        if len(hashes) > 1:
            raise DataError("ensemble members were built over different vocabularies")
        self.encoders = list(encoders)

    @property
    def hidden_dim(self):
        return self.encoders[0].config.hidden_dim


def ensemble_embed(model: EnsembleModel, batch):
    """Elementwise sum of member last-hidden states; pooler bypassed,
    dropout off."""
    total = None
    for enc in model.encoders:
        h = enc.encode(batch, train_mode=False).last_hidden.data
        total = h.copy() if total is None else total + h
    return total


@dataclass(frozen=True)
class DistillConfig:
    seed: int = 1
    steps: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    eval_interval: int = 50
    temperature: float = 1.0
    objective: str = "similarity"   # or "regression"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.objective not in ("similarity", "regression"):
            raise ConfigError(f"unknown distillation objective {self.objective!r}")


@dataclass
class DistillLog:
    train_log: TrainLog = field(default_factory=TrainLog)
    probe_loss_step0: float = float("nan")
    probe_loss_best: float = float("nan")
    spearman_untrained: float = float("nan")
    spearman_best: float = float("nan")


def _norm_rows_graph(H):
    b = H.shape[0]
    return ad.div(H, ad.reshape(ad.l2_norm(H, axis=-1), (b, 1)))


def _similarity_loss(student_h, teacher_emb, temperature):
    b = student_h.shape[0]
    Sn = _norm_rows_graph(student_h)
    S = ad.scale(ad.matmul(Sn, ad.transpose(Sn, (1, 0))), 1.0 / temperature)
    Tn = teacher_emb / np.linalg.norm(teacher_emb, axis=1, keepdims=True)
    T = np.clip(Tn @ Tn.T, -1.0, 1.0) / temperature
    off = (1.0 - np.eye(b)).astype(student_h.dtype)
    diff = S - ad.Tensor(T.astype(student_h.dtype))
    denom = max(b * (b - 1), 1)
    return ad.scale(ad.sum_(ad.mul(ad.mul(diff, diff), off)), 1.0 / denom)


def _regression_loss(student_h, teacher_emb):
    diff = student_h - ad.Tensor(teacher_emb.astype(student_h.dtype))
    return ad.mean(ad.mul(diff, diff))


def distill(teacher: EnsembleModel, student: Encoder, corpus, sts_dev, vocab,
            cfg: DistillConfig):
    """Train ``student`` to match the frozen ``teacher`` ensemble; returns a
    DistillLog.  The best checkpoint (by student validation Spearman) is
    restored into ``student``."""
    if cfg.objective == "regression" and student.config.hidden_dim != teacher.hidden_dim:
        raise ConfigError("embedding-regression distillation requires matching "
                          "hidden dimensions")
    max_len = student.config.max_seq_len

    def teacher_embed(batch):
        return ensemble_embed(teacher, batch)

    def batch_loss(batch, train_mode):
        t_emb = teacher_embed(batch).astype(np.float64)
        h = student.encode(batch, train_mode=train_mode, pass_index=0).last_hidden
        if cfg.objective == "similarity":
            return _similarity_loss(h, t_emb, cfg.temperature)
        return _regression_loss(h, t_emb)

    # fixed probe batch for noise-free before/after loss comparison
    probe_sentences = next(batch_iter(corpus, cfg.batch_size, cfg.seed, 999_983))
    probe_batch = make_batch(vocab, probe_sentences, max_len)

    def probe_loss():
        return float(batch_loss(probe_batch, train_mode=False).item())

    opt = Adam(student.parameters(), lr=cfg.learning_rate)
    embed = ensemble_embed_fn([student], vocab)
    log = DistillLog()
    log.probe_loss_step0 = probe_loss()
    log.spearman_untrained = sts_eval(embed, sts_dev)

    tl = log.train_log
    best_snap = None
    best_probe = log.probe_loss_step0
    tl.best_spearman = log.spearman_untrained
    tl.best_step = 0
    tl.evals.append((0, log.spearman_untrained))

    step, epoch, done = 0, 0, False
    while not done:
        for sentences in batch_iter(corpus, cfg.batch_size, cfg.seed, epoch):
            step += 1
            batch = make_batch(vocab, sentences, max_len)
            loss = batch_loss(batch, train_mode=True)
            val = float(loss.item())
            if not np.isfinite(val):
                raise NumericError(f"non-finite distillation loss at step {step}")
            loss.backward()
            opt.step()
            tl.step_records.append({"step": step, "total": val})
            if step % cfg.eval_interval == 0 or step == cfg.steps:
                rho = sts_eval(embed, sts_dev)
                tl.evals.append((step, rho))
                if rho > tl.best_spearman:
                    tl.best_spearman = rho
                    tl.best_step = step
                    best_snap = {k: v.data.copy() for k, v in student.params.items()}
                    best_probe = probe_loss()
            if step >= cfg.steps:
                done = True
                break
        epoch += 1

    if best_snap is not None:
        for k, v in best_snap.items():
            student.params[k].data = v.copy()
            student.params[k].grad = None
    log.probe_loss_best = best_probe
    log.spearman_best = tl.best_spearman
    return log
