"""Named finite-difference checks over every differentiable primitive and
every loss, for the grad-check command and the acceptance suite.

Each case runs ``n_trials`` random float64 configurations away from the
declared singular neighborhoods and fails if the relative error of any
reverse-mode gradient exceeds the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import RngStreams, Tensor
from .data import TokenBatch
from .encoder import Encoder, EncoderConfig, ViewBundle
from .gradcheck import check_gradients


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_error: float
    detail: str = ""


def _primitive_cases():
    def rnd(r, *s):
        return r.standard_normal(s)

    return {
        "add": (lambda a, b: ad.sum_(ad.add(a, b)),
                lambda r: [rnd(r, 3, 4), rnd(r, 4)]),
        "mul": (lambda a, b: ad.sum_(ad.mul(a, b)),
                lambda r: [rnd(r, 3, 4), rnd(r, 3, 4)]),
        "div": (lambda a, b: ad.sum_(ad.div(a, b)),
                lambda r: [rnd(r, 3, 4), 1.5 + r.random((3, 4))]),
        "scale": (lambda a: ad.sum_(ad.scale(a, 2.3)), lambda r: [rnd(r, 3, 4)]),
        "matmul": (lambda a, b: ad.sum_(ad.matmul(a, b)),
                   lambda r: [rnd(r, 4, 3), rnd(r, 3, 5)]),
        "matmul_batched": (lambda a, b: ad.sum_(ad.matmul(a, b)),
                           lambda r: [rnd(r, 2, 3, 4), rnd(r, 2, 4, 3)]),
        "tanh": (lambda a: ad.sum_(ad.tanh(a)), lambda r: [rnd(r, 3, 4)]),
        "exp": (lambda a: ad.sum_(ad.exp(a)), lambda r: [rnd(r, 3, 4)]),
        "log": (lambda a: ad.sum_(ad.log(a)), lambda r: [0.5 + r.random((3, 4))]),
        "sqrt": (lambda a: ad.sum_(ad.sqrt(a)), lambda r: [0.5 + r.random((3, 4))]),
        "softmax": (lambda a: ad.sum_(ad.mul(
                        ad.softmax(a, temperature=0.7),
                        Tensor(np.arange(12.0).reshape(3, 4)))),
                    lambda r: [rnd(r, 3, 4)]),
        "layer_norm": (lambda x, g, b: ad.sum_(ad.mul(
                           ad.layer_norm(x, g, b),
                           Tensor(np.linspace(-1, 1, 18).reshape(3, 6)))),
                       lambda r: [rnd(r, 3, 6), 1.0 + 0.1 * rnd(r, 6), 0.1 * rnd(r, 6)]),
        "embedding": (lambda t: ad.sum_(ad.mul(
                          ad.embedding(t, np.array([0, 2, 1, 2])),
                          Tensor(np.arange(12.0).reshape(4, 3)))),
                      lambda r: [rnd(r, 3, 3)]),
        "sum_mean": (lambda a: ad.mean(ad.mul(ad.sum_(a, axis=0), ad.sum_(a, axis=0))),
                     lambda r: [rnd(r, 4, 3)]),
        "l2_norm": (lambda a: ad.sum_(ad.l2_norm(a, axis=-1)),
                    lambda r: [1.0 + r.random((3, 4))]),
        "cosine_sim": (lambda a, b: ad.cosine_sim(a, b),
                       lambda r: [1.0 + r.random(5), -1.0 - r.random(5)]),
        "dropout": (lambda a: ad.sum_(ad.dropout(a, 0.3, RngStreams(7).get("d"))),
                    lambda r: [rnd(r, 4, 5)]),
    }


def _loss_cases():
    cfg = L.LossConfig()

    def bundle_mats(r):
        return [0.5 + r.random((3, 4)) for _ in range(8)]

    return {
        "loss_l_tn": (lambda h, hp: L.l_tn(h, hp),
                      lambda r: [1.0 + r.random(5), -1.0 - r.random(5)]),
        "loss_info_nce": (lambda H, Hp: L.info_nce(H, Hp, tau=0.5),
                          lambda r: [r.standard_normal((4, 5)) + 0.2,
                                     r.standard_normal((4, 5)) + 0.2]),
        "loss_icnce": (lambda A, B: L.icnce(A, B, tau=0.5),
                       lambda r: [r.standard_normal((4, 5)) + 0.2,
                                  r.standard_normal((4, 5)) + 0.2]),
        "loss_l_tn_modulated": (
            lambda hp, hpp, hl1, hl2: L.l_tn_modulated(hp, hpp, hl1, hl2, cfg),
            lambda r: [0.5 + r.random((3, 4)) for _ in range(4)]),
        "loss_ictn": (lambda *ts: L.ictn(ViewBundle(*ts), cfg), bundle_mats),
        "loss_total": (lambda *ts: L.total_loss(ViewBundle(*ts), cfg).total,
                       bundle_mats),
    }


def _attention_composite_case(trial):
    """FD-check the full encoder forward (attention composite included)
    against a handful of its parameters."""
    rng = np.random.default_rng(5000 + trial)
    config = EncoderConfig(vocab_size=12, max_seq_len=6, hidden_dim=8,
                           num_layers=1, num_heads=2, ffn_dim=12, dropout_p=0.0)
    enc = Encoder(config, seed=trial, name="g").astype(np.float64)
    # Re-draw the weights at a larger scale: at init-scale the attention
    # scores are ~0, softmax is near-uniform, and the true q/k gradients sit
    # below finite-difference resolution.
    for key, t in enc.params.items():
        if key.endswith(("_w", "emb")):
            t.data = rng.standard_normal(t.shape) * 0.4
    ids = rng.integers(4, 12, size=(2, 6))
    ids[:, 0] = 1
    mask = np.ones_like(ids)
    mask[0, 4:] = 0
    ids[0, 4:] = 0
    batch = TokenBatch(ids=ids, attention_mask=mask)
    weights = rng.standard_normal((2, 8))
    names = ["layer0.q_w", "layer0.o_w", "layer0.ffn1_w", "layer0.ln1_g",
             "pooler_w", "tok_emb"]
    name = names[trial % len(names)]

    def f(p):
        old = enc.params[name]
        enc.params[name] = p
        try:
            out = enc.encode(batch, train_mode=False)
            return ad.sum_(ad.mul(ad.add(out.last_hidden, out.pooler),
                                  Tensor(weights)))
        finally:
            enc.params[name] = old

    return f, [enc.params[name].data.copy()]


def run_gradient_suite(n_trials=20, rtol=1e-6):
    """Run every named check; returns a list of CheckResult."""
    results = []
    cases = {**_primitive_cases(), **_loss_cases()}
    for name, (f, make) in sorted(cases.items()):
        worst = 0.0
        passed = True
        detail = ""
        for trial in range(n_trials):
            rng = np.random.default_rng(10_000 + 37 * trial)
            try:
                worst = max(worst, check_gradients(f, make(rng), rtol=rtol))
            except AssertionError as exc:
                passed = False
                detail = str(exc)
                break
        results.append(CheckResult(name, passed, worst, detail))

    worst = 0.0
    passed = True
    detail = ""
    for trial in range(n_trials):
        f, inputs = _attention_composite_case(trial)
        try:
            worst = max(worst, check_gradients(f, inputs, rtol=rtol))
        except AssertionError as exc:
            passed = False
            detail = str(exc)
            break
    results.append(CheckResult("encoder_attention_composite", passed, worst, detail))
    return results
