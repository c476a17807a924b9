"""Concept-bottleneck mixing network and the additive baseline mixer.

The mixer maps chosen-action utilities q and the global state s to Q_tot
through K interpretable concepts: dual embeddings for concept presence and
absence, a shared presence scorer, state-conditioned non-negative mixing
weights for each semantics, convex per-concept combination, and attention
credits over concepts.  All operations are batched over leading rows and
dual-mode (Node or ndarray inputs).

Monotonicity contract: Q_tot is affine in q with coefficients
sum_k alpha_k (p w+ + (1-p) w-) where w+/- pass through absolute value and
alpha is a softmax, so every coefficient is non-negative and per-agent
argmax equals the joint argmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .nets import ParamSet, uniform_init


@dataclass(frozen=True)
class MixerConfig:
    n_agents: int
    state_dim: int
    concepts: int = 16      # K
    embed_dim: int = 64     # m
    attn_dim: int = 64
    bias_hidden: int = 32
    n_supervised: int = 0   # leading concepts with ground-truth labels

    def __post_init__(self):
        if min(self.n_agents, self.state_dim, self.concepts, self.embed_dim,
               self.attn_dim, self.bias_hidden) < 1:
            raise ValueError("MixerConfig: all dimensions must be >= 1")
        if not 0 <= self.n_supervised <= self.concepts:
            raise ValueError("MixerConfig: n_supervised must lie in [0, concepts]")


@dataclass(frozen=True)
class InterventionMask:
    """Per-concept forced probabilities; absent indices keep the prediction."""

    forced: dict[int, float]

    def validate(self, n_concepts: int) -> None:
        for k, v in self.forced.items():
            if not 0 <= int(k) < n_concepts:
                raise ValueError(f"intervention index {k} outside 0..{n_concepts - 1}")
            if not 0.0 <= float(v) <= 1.0:
                raise ValueError(f"intervention value {v} for concept {k} outside [0, 1]")

    def as_arrays(self, n_concepts: int):
        """(keep, forced) row vectors: p_used = p_hat * keep + forced."""
        self.validate(n_concepts)
        keep = np.ones(n_concepts)
        forced = np.zeros(n_concepts)
        for k, v in self.forced.items():
            keep[int(k)] = 0.0
            forced[int(k)] = float(v)
        return keep, forced


@dataclass
class MixResult:
    """Full introspection of one mixer evaluation (batched or single row)."""

    q_tot: object          # (B,) | scalar
    p_hat: object          # (B, K) pre-intervention probabilities
    p_used: object         # (B, K) probabilities actually mixed
    score_logits: object   # (B, K) scorer logits behind p_hat
    alpha: object          # (B, K) credits on the simplex
    q_hat: object          # (B, K) per-concept Q
    q_pos: object          # (B, K)
    q_neg: object          # (B, K)
    emb_pos: object        # (B, K, m)
    emb_neg: object        # (B, K, m)
    emb_mixed: object      # (B, K, m)
    f_bias: object         # (B,)


def init_mixer_params(cfg: MixerConfig, seed: int) -> ParamSet:
    rng = np.random.default_rng(seed)
    s, k, m, n = cfg.state_dim, cfg.concepts, cfg.embed_dim, cfg.n_agents
    p = ParamSet(meta={"spec": cfg, "seed": seed})
    p.add("cpos.w", uniform_init(rng, (k, m, s), s))
    p.add("cpos.b", np.zeros((k, m)))
    p.add("cneg.w", uniform_init(rng, (k, m, s), s))
    p.add("cneg.b", np.zeros((k, m)))
    p.add("score.w", uniform_init(rng, (2 * m,), 2 * m))
    p.add("score.b", np.zeros(()))
    p.add("hpos.w", uniform_init(rng, (k, n, s), s))
    p.add("hpos.b", np.zeros((k, n)))
    p.add("hneg.w", uniform_init(rng, (k, n, s), s))
    p.add("hneg.b", np.zeros((k, n)))
    p.add("attn.q", uniform_init(rng, (cfg.attn_dim, m), m))
    p.add("attn.kv", uniform_init(rng, (cfg.attn_dim, s), s))
    p.add("bias.w0", uniform_init(rng, (cfg.bias_hidden, s), s))
    p.add("bias.b0", np.zeros(cfg.bias_hidden))
    p.add("bias.w1", uniform_init(rng, (1, cfg.bias_hidden), cfg.bias_hidden))
    p.add("bias.b1", np.zeros(1))
    return p


def _check_rows(cfg: MixerConfig, s, name: str, dim: int):
    v = value_of(s)
    if v.ndim != 2 or v.shape[1] != dim:
        raise ad.ShapeError(f"mixer: expected {name} of shape (rows, {dim}), got {v.shape}")


def concept_embeddings(params, cfg: MixerConfig, s):
    """Positive/negative concept embeddings, each (B, K, m), entries >= 0."""
    _check_rows(cfg, s, "state", cfg.state_dim)
    epos = ad.relu(ad.add(ad.einsum("kms,bs->bkm", params["cpos.w"], s), params["cpos.b"]))
    eneg = ad.relu(ad.add(ad.einsum("kms,bs->bkm", params["cneg.w"], s), params["cneg.b"]))
    return epos, eneg


def concept_scores(params, emb_pos, emb_neg):
    """Shared scorer logits over [c+; c-] pairs, (B, K)."""
    both = ad.concat([emb_pos, emb_neg], axis=-1)
    return ad.add(ad.einsum("bkc,c->bk", both, params["score.w"]), params["score.b"])


def concept_probs(params, emb_pos, emb_neg):
    return ad.sigmoid(concept_scores(params, emb_pos, emb_neg))


def apply_intervention(p_hat, keep, forced):
    """Override probabilities where keep is 0: p_hat * keep + forced.

    keep/forced are constants, so overridden slots carry the forced value
    exactly and pass no gradient; kept slots are bit-identical to p_hat
    (multiplication by 1 and addition of 0 are exact, p_hat >= 0).
    """
    return ad.add(ad.mul(p_hat, keep), forced)


def temporal_q(params, cfg: MixerConfig, s, q_vec):
    """Per-concept aggregate utilities under each semantics, (B, K) each.

    Hypernetworks map s to one weight per agent; absolute value keeps the
    aggregation monotone in every q_i.
    """
    _check_rows(cfg, q_vec, "q_vec", cfg.n_agents)
    wpos = ad.absolute(ad.add(ad.einsum("kns,bs->bkn", params["hpos.w"], s), params["hpos.b"]))
    wneg = ad.absolute(ad.add(ad.einsum("kns,bs->bkn", params["hneg.w"], s), params["hneg.b"]))
    q_pos = ad.einsum("bkn,bn->bk", wpos, q_vec)
    q_neg = ad.einsum("bkn,bn->bk", wneg, q_vec)
    return q_pos, q_neg


def concept_q(p_used, q_pos, q_neg):
    """Convex combination per concept: p Q+ + (1-p) Q-."""
    return ad.add(ad.mul(p_used, q_pos), ad.mul(ad.sub(1.0, p_used), q_neg))


def mixed_embeddings(p_used, emb_pos, emb_neg):
    p3 = ad.reshape(p_used, value_of(p_used).shape + (1,))
    return ad.add(ad.mul(p3, emb_pos), ad.mul(ad.sub(1.0, p3), emb_neg))


def credits(params, cfg: MixerConfig, emb_mixed, s):
    """Attention weights over concepts, softmax-normalized, (B, K)."""
    query = ad.einsum("am,bkm->bka", params["attn.q"], emb_mixed)
    key = ad.relu(ad.einsum("as,bs->ba", params["attn.kv"], s))
    logits = ad.einsum("bka,ba->bk", query, key)
    return ad.softmax(logits, axis=-1)


def state_bias(params, s):
    """Unconstrained scalar bias f(s), (B,)."""
    hidden = ad.relu(ad.add(ad.einsum("hs,bs->bh", params["bias.w0"], s), params["bias.b0"]))
    out = ad.add(ad.einsum("oh,bh->bo", params["bias.w1"], hidden), params["bias.b1"])
    return ad.reshape(out, (value_of(out).shape[0],))


def mix_batch(params, cfg: MixerConfig, q_vec, s, keep=None, forced=None) -> MixResult:
    """Full pipeline over rows; keep/forced broadcast over (B, K)."""
    _check_rows(cfg, s, "state", cfg.state_dim)
    _check_rows(cfg, q_vec, "q_vec", cfg.n_agents)
    emb_pos, emb_neg = concept_embeddings(params, cfg, s)
    logits = concept_scores(params, emb_pos, emb_neg)
    p_hat = ad.sigmoid(logits)
    if keep is None:
        p_used = p_hat
    else:
        p_used = apply_intervention(p_hat, keep, forced)
    emb_mixed = mixed_embeddings(p_used, emb_pos, emb_neg)
    q_pos, q_neg = temporal_q(params, cfg, s, q_vec)
    q_hat = concept_q(p_used, q_pos, q_neg)
    alpha = credits(params, cfg, emb_mixed, s)
    f_bias = state_bias(params, s)
    q_tot = ad.add(ad.reduce_sum(ad.mul(alpha, q_hat), axis=-1), f_bias)
    return MixResult(q_tot=q_tot, p_hat=p_hat, p_used=p_used, score_logits=logits,
                     alpha=alpha, q_hat=q_hat, q_pos=q_pos, q_neg=q_neg,
                     emb_pos=emb_pos, emb_neg=emb_neg, emb_mixed=emb_mixed,
                     f_bias=f_bias)


def mix(params, cfg: MixerConfig, q_vec, s, iv: InterventionMask | None = None) -> MixResult:
    """Single-row convenience: q_vec (n,), s (state_dim,), scalar Q_tot."""
    sv, qv = value_of(s), value_of(q_vec)
    if sv.ndim != 1 or qv.ndim != 1:
        raise ad.ShapeError(
            f"mix: expected single rows, got state {sv.shape}, q_vec {qv.shape}")
    keep = forced = None
    if iv is not None and iv.forced:
        keep, forced = iv.as_arrays(cfg.concepts)
    out = mix_batch(params, cfg, ad.reshape(q_vec, (1, qv.shape[0])),
                    ad.reshape(s, (1, sv.shape[0])), keep, forced)

    def one(x, shape):
        return ad.reshape(x, shape)

    k, m = cfg.concepts, cfg.embed_dim
    return MixResult(
        q_tot=one(out.q_tot, ()), p_hat=one(out.p_hat, (k,)),
        p_used=one(out.p_used, (k,)), score_logits=one(out.score_logits, (k,)),
        alpha=one(out.alpha, (k,)), q_hat=one(out.q_hat, (k,)),
        q_pos=one(out.q_pos, (k,)), q_neg=one(out.q_neg, (k,)),
        emb_pos=one(out.emb_pos, (k, m)), emb_neg=one(out.emb_neg, (k, m)),
        emb_mixed=one(out.emb_mixed, (k, m)), f_bias=one(out.f_bias, ()))


def vdn_mix(q_vec):
    """Additive baseline: Q_tot is the plain sum of utilities."""
    v = value_of(q_vec)
    if v.shape[-1] < 1:
        raise ad.ShapeError("vdn_mix: need at least one agent utility")
    return ad.reduce_sum(q_vec, axis=-1)
