"""Mixup augmentation, pseudo-label SSL and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Example, audio_frames, batches, collate
from .model import (Batch, Mix, Model, NumericalError, backward, bce_terms, forward,
                    predict_proba, weighted_loss)

log = logging.getLogger(__name__)

DEFAULT_LR = {"state": 4e-4, "backchannel": 2e-4, "bargein": 5e-4}


@dataclass
class AugmentState:
    alpha: float = 0.25
    seed: int = 0
    p_threshold: float = 0.95
    semi_weight: float = 1.0
    mda: bool = True
    rng_labeled: np.random.Generator = field(init=False, repr=False)
    rng_unlabeled: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.p_threshold < 1.0:
            raise ValueError("p_threshold must lie in (0, 1)")
        # separate streams so the unlabeled side never shifts labeled draws
        a, b = np.random.SeedSequence(self.seed).spawn(2)
        self.rng_labeled = np.random.default_rng(a)
        self.rng_unlabeled = np.random.default_rng(b)


def sample_lambda(alpha: float, rng: np.random.Generator, size=None):
    """Mixing ratio drawn from Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return rng.beta(alpha, alpha, size=size)


def mixup(f_i, f_j, y_i, y_j, lam: float):
    """Convex combination of two samples' features and labels.

    ``f_i``/``f_j`` may be tuples of per-modality vectors; every modality
    uses the same ``lam``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")

    def mix(a, b):
        return lam * np.asarray(a) + (1.0 - lam) * np.asarray(b)

    if isinstance(f_i, tuple):
        feats = tuple(mix(a, b) for a, b in zip(f_i, f_j))
    else:
        feats = mix(f_i, f_j)
    return feats, mix(y_i, y_j)


def draw_mix(n: int, alpha: float, rng: np.random.Generator) -> Mix:
    perm = rng.permutation(n)
    lam = sample_lambda(alpha, rng, size=n)
    return Mix(perm=perm, lam=lam)


def mix_targets(y: np.ndarray, mix: Optional[Mix]) -> np.ndarray:
    if mix is None:
        return y
    lam = mix.lam[:, None]
    return lam * y + (1.0 - lam) * y[mix.perm]


def loss_sup(y_hat, p_hat) -> float:
    """Summed per-class binary cross-entropy on probabilities."""
    loss, _ = bce_terms(np.atleast_2d(np.asarray(y_hat, dtype=np.float64)),
                        np.atleast_2d(np.asarray(p_hat, dtype=np.float64)))
    return float(loss.mean())


def pseudo_labels(p: np.ndarray, p_threshold: float):
    """Hard labels ``p > p_threshold`` and a keep-mask (False when all zero)."""
    p = np.asarray(p)
    y = (p > p_threshold).astype(np.float64)
    return y, y.any(axis=-1)


def semi_pair_weights(mask: np.ndarray, mix: Optional[Mix]) -> np.ndarray:
    """A mixed pair is dropped only when both partners are masked out."""
    keep = mask if mix is None else (mask | mask[mix.perm])
    return keep.astype(np.float64)


def loss_semi(y_semi: np.ndarray, mask: np.ndarray, p_hat: np.ndarray,
              mix: Optional[Mix] = None) -> float:
    """Mean loss over contributing pairs; zero when none contributes."""
    w = semi_pair_weights(np.asarray(mask, dtype=bool), mix)
    if w.sum() == 0:
        return 0.0
    per, _ = bce_terms(mix_targets(np.asarray(y_semi, dtype=np.float64), mix), np.asarray(p_hat))
    return float((per * w).sum() / w.sum())


class Adam:
    def __init__(self, lr: float = 4e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def sup_loss_and_grads(model: Model, batch: Batch, mix: Optional[Mix] = None):
    probs, cache = forward(model, batch, mix)
    loss, dlogits = weighted_loss(model, probs, mix_targets(batch.targets, mix))
    return loss, backward(model, cache, dlogits)


def semi_loss_and_grads(model: Model, batch: Batch, y_semi: np.ndarray, mask: np.ndarray,
                        mix: Optional[Mix] = None):
    """``L_semi`` and its gradient for given pseudo-labels.

    Pairs whose partners are both masked are never forwarded, so they
    cannot influence the loss or the gradient.
    """
    w = semi_pair_weights(mask, mix)
    if w.sum() == 0:
        return 0.0, {k: np.zeros_like(v) for k, v in model.params.items()}
    probs, cache = forward(model, batch, mix)
    loss, dlogits = weighted_loss(model, probs, mix_targets(y_semi, mix), w)
    return loss, backward(model, cache, dlogits)


def train_step(model: Model, labeled: Batch, unlabeled: Optional[Batch], aug: AugmentState,
               opt: Adam) -> tuple[float, float]:
    """One optimizer update on ``L_sup + semi_weight * L_semi``."""
    mix = draw_mix(len(labeled), aug.alpha, aug.rng_labeled) if aug.mda else None
    l_sup, grads = sup_loss_and_grads(model, labeled, mix)
    l_semi = 0.0
    if unlabeled is not None and len(unlabeled) > 0:
        p = predict_proba(model, unlabeled)
        y_semi, mask = pseudo_labels(p, aug.p_threshold)
        umix = draw_mix(len(unlabeled), aug.alpha, aug.rng_unlabeled) if aug.mda else None
        l_semi, g_semi = semi_loss_and_grads(model, unlabeled, y_semi, mask, umix)
        if aug.semi_weight != 0.0:
            for k in grads:
                grads[k] += aug.semi_weight * g_semi[k]
    total = l_sup + aug.semi_weight * l_semi
    if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NumericalError(f"non-finite loss or gradient (L_sup={l_sup}, L_semi={l_semi})")
    opt.step(model.params, grads)
    model.trained = True
    return l_sup, l_semi


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    unlabeled_ratio: int = 3
    lr: Optional[float] = None
    alpha: float = 0.25
    p_threshold: float = 0.95
    semi_weight: float = 1.0
    mda: bool = True
    ssl: bool = True
    ssl_warmup_epochs: int = 0
    seed: int = 0


def fit(model: Model, labeled: Sequence[Example], unlabeled: Sequence[Example] = (),
        cfg: TrainConfig = TrainConfig(), callback=None) -> list[dict]:
    """Train in place; returns per-epoch mean losses.

    ``callback(epoch, model)`` runs after every epoch; a dict it returns is
    merged into that epoch's record.
    """
    if not labeled:
        raise ValueError("no labeled examples")
    model.set_audio_stats(audio_frames(labeled))
    lr = cfg.lr if cfg.lr is not None else DEFAULT_LR.get(model.config.task, 4e-4)
    opt = Adam(lr)
    aug = AugmentState(alpha=cfg.alpha, seed=cfg.seed, p_threshold=cfg.p_threshold,
                       semi_weight=cfg.semi_weight, mda=cfg.mda)
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    order_rng = np.random.default_rng(seeds[2])
    uorder_rng = np.random.default_rng(seeds[3])
    use_ssl = cfg.ssl and len(unlabeled) > 0
    ub = cfg.batch_size * cfg.unlabeled_ratio
    history = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(labeled))
        uorder = uorder_rng.permutation(len(unlabeled)) if use_ssl else None
        sums = np.zeros(2)
        steps = 0
        for i, batch in enumerate(batches(labeled, cfg.batch_size, order)):
            ubatch = None
            if use_ssl and epoch >= cfg.ssl_warmup_epochs:
                start = (i * ub) % len(unlabeled)
                ids = uorder[start:start + ub]
                ubatch = collate([unlabeled[j] for j in ids])
            sums += train_step(model, batch, ubatch, aug, opt)
            steps += 1
        rec = {"epoch": epoch, "loss_sup": sums[0] / steps, "loss_semi": sums[1] / steps}
        if callback is not None:
            rec.update(callback(epoch, model) or {})
        log.info("epoch %d  L_sup=%.4f  L_semi=%.4f", epoch, rec["loss_sup"], rec["loss_semi"])
        history.append(rec)
    return history


def predict_examples(model: Model, examples: Sequence[Example], batch_size: int = 256) -> np.ndarray:
    out = [predict_proba(model, b) for b in batches(examples, batch_size)]
    return np.concatenate(out, axis=0)
