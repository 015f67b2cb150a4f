"""Multimodal classifier with hand-written gradients.

Text path: a shared 1D CNN (max-pooled over time) encodes the user and bot
texts, a ReLU layer maps the concatenation to ``f_t``. Audio path: a GRU
over log-mel frames whose final hidden state is ``f_a``. Fusion gates each
modality by the sigmoid of the other and combines them with a 3-mode
bilinear map. A linear layer with softmax (single-label) or per-label
sigmoid (multi-label) produces probabilities.

All arrays are batch-first. Audio batches are left-padded so the final
hidden state sits at the last time step for every sample.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..features import EmbeddingTable

TASKS = {"state": 3, "bargein": 2, "backchannel": 10}
EPS = 1e-7


class NumericalError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    task: str = "state"
    n_classes: int = 3
    hidden: int = 32
    fused: Optional[int] = None
    widths: tuple = (2, 3, 4)
    n_filters: int = 32
    n_mels: int = 64
    modality: str = "both"  # both | text | audio
    use_bot_text: bool = True
    use_timing: bool = False
    output: str = "softmax"  # softmax | sigmoid

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.fused is None:
            self.fused = self.hidden
        if self.modality not in ("both", "text", "audio"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.output not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown output {self.output!r}")
        if self.task in TASKS and self.n_classes != TASKS[self.task]:
            raise ValueError(f"task {self.task!r} has {TASKS[self.task]} classes")
        if min(self.widths) < 1 or self.hidden <= 0:
            raise ValueError("widths and hidden size must be positive")

    @property
    def uses_text(self) -> bool:
        return self.modality in ("both", "text")

    @property
    def uses_audio(self) -> bool:
        return self.modality in ("both", "audio")

    @property
    def text_repr_dim(self) -> int:
        per_text = len(self.widths) * self.n_filters
        return per_text * (2 if self.use_bot_text else 1)

    @property
    def head_dim(self) -> int:
        base = self.fused if self.modality == "both" else self.hidden
        return base + (1 if self.use_timing else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class Batch:
    user_ids: np.ndarray  # (B, Lu) int, padded with -1
    bot_ids: np.ndarray  # (B, Lb)
    audio: np.ndarray  # (B, T, n_mels), left-padded
    audio_mask: np.ndarray  # (B, T) 1 where a real frame
    timing: np.ndarray  # (B,)
    targets: Optional[np.ndarray] = None  # (B, K)

    def __len__(self) -> int:
        return len(self.timing)


@dataclass
class Mix:
    """Mixing partner ``perm[b]`` and weight ``lam[b]`` for each sample."""

    perm: np.ndarray
    lam: np.ndarray


class Model:
    def __init__(self, config: ModelConfig, embeddings: EmbeddingTable,
                 params: Optional[dict] = None, audio_mean=None, audio_std=None,
                 dtype=np.float32, seed: int = 0):
        self.config = config
        self.embeddings = embeddings
        self.dtype = np.dtype(dtype)
        self.emb = np.asarray(embeddings.matrix, dtype=self.dtype)
        self.audio_mean = np.zeros(config.n_mels) if audio_mean is None else np.asarray(audio_mean, dtype=np.float64)
        self.audio_std = np.ones(config.n_mels) if audio_std is None else np.asarray(audio_std, dtype=np.float64)
        self.trained = params is not None
        self.params = params if params is not None else init_params(config, embeddings.dim, seed, self.dtype)
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in self.params.items()}

    def astype(self, dtype) -> "Model":
        m = Model(self.config, self.embeddings, {k: v.copy() for k, v in self.params.items()},
                  self.audio_mean, self.audio_std, dtype)
        m.trained = self.trained
        return m

    def set_audio_stats(self, frames: np.ndarray) -> None:
        self.audio_mean = frames.mean(axis=0).astype(np.float64)
        self.audio_std = np.maximum(frames.std(axis=0), 1e-3).astype(np.float64)


def param_shapes(cfg: ModelConfig, emb_dim: int) -> dict:
    H = cfg.hidden
    shapes = {}
    if cfg.uses_text:
        for w in cfg.widths:
            shapes[f"conv{w}_W"] = (cfg.n_filters, w * emb_dim)
            shapes[f"conv{w}_b"] = (cfg.n_filters,)
        shapes["W1"] = (H, cfg.text_repr_dim)
        shapes["b1"] = (H,)
    if cfg.uses_audio:
        shapes["gru_Wx"] = (cfg.n_mels, 3 * H)
        shapes["gru_Wh"] = (H, 3 * H)
        shapes["gru_b"] = (3 * H,)
    if cfg.modality == "both":
        shapes["W2"] = (cfg.fused, H, H)
        shapes["b2"] = (cfg.fused,)
    shapes["Wc"] = (cfg.n_classes, cfg.head_dim)
    shapes["bc"] = (cfg.n_classes,)
    return shapes


def init_params(cfg: ModelConfig, emb_dim: int, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg, emb_dim).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name.startswith("gru"):
            bound = 1.0 / np.sqrt(cfg.hidden)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name == "W2":
            params[name] = rng.normal(0.0, 1.0 / cfg.hidden, size=shape)
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return {k: v.astype(dtype) for k, v in params.items()}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --- text encoder ---------------------------------------------------------------


def _lookup(model: Model, ids: np.ndarray) -> np.ndarray:
    x = model.emb[np.maximum(ids, 0)]
    x[ids < 0] = 0.0
    return x


def _conv_max(x: np.ndarray, lengths: np.ndarray, W: np.ndarray, b: np.ndarray, width: int):
    """Max over time of a 'valid' 1D convolution.

    Sequences shorter than the kernel are zero-padded up to its width.
    """
    B, L, D = x.shape
    if L < width:
        x = np.concatenate([x, np.zeros((B, width - L, D), dtype=x.dtype)], axis=1)
        L = width
    win = sliding_window_view(x, width, axis=1)  # (B, P, D, w)
    win = win.transpose(0, 1, 3, 2).reshape(B, L - width + 1, width * D)
    z = win @ W.T + b  # (B, P, F)
    n_valid = np.maximum(lengths, width) - width + 1
    invalid = np.arange(z.shape[1])[None, :] >= n_valid[:, None]
    z = np.where(invalid[:, :, None], -np.inf, z)
    idx = z.argmax(axis=1)  # (B, F)
    r = np.take_along_axis(z, idx[:, None, :], axis=1)[:, 0, :]
    return r, (win, idx)


def _conv_max_backward(dr: np.ndarray, cache):
    win, idx = cache
    B = win.shape[0]
    sel = win[np.arange(B)[:, None], idx]  # (B, F, w*D)
    dW = np.einsum("bf,bfk->fk", dr, sel)
    return dW, dr.sum(axis=0)


def text_repr(model: Model, ids: np.ndarray):
    """Concatenated max-pooled CNN features of one text, per width."""
    lengths = np.maximum((ids >= 0).sum(axis=1), 1)
    x = _lookup(model, ids)
    p = model.params
    outs, caches = [], []
    for w in model.config.widths:
        r, c = _conv_max(x, lengths, p[f"conv{w}_W"], p[f"conv{w}_b"], w)
        outs.append(r)
        caches.append(c)
    return np.concatenate(outs, axis=1), caches


def text_encode(model: Model, batch: Batch):
    r_user, c_user = text_repr(model, batch.user_ids)
    parts, caches = [r_user], [c_user]
    if model.config.use_bot_text:
        r_bot, c_bot = text_repr(model, batch.bot_ids)
        parts.append(r_bot)
        caches.append(c_bot)
    r = np.concatenate(parts, axis=1)
    a1 = r @ model.params["W1"].T + model.params["b1"]
    return np.maximum(a1, 0.0), (r, a1, caches)


def text_backward(model: Model, dft: np.ndarray, cache, grads: dict) -> None:
    r, a1, caches = cache
    da1 = dft * (a1 > 0)
    grads["W1"] += da1.T @ r
    grads["b1"] += da1.sum(axis=0)
    dr = da1 @ model.params["W1"]
    nf = model.config.n_filters
    col = 0
    for text_caches in caches:
        for w, c in zip(model.config.widths, text_caches):
            dW, db = _conv_max_backward(dr[:, col:col + nf], c)
            grads[f"conv{w}_W"] += dW
            grads[f"conv{w}_b"] += db
            col += nf


# --- audio encoder --------------------------------------------------------------


def audio_encode(model: Model, batch: Batch):
    """Final GRU hidden state. Padded steps carry the state through unchanged."""
    p = model.params
    H = model.config.hidden
    x = ((batch.audio - model.audio_mean) / model.audio_std).astype(model.dtype)
    m = batch.audio_mask.astype(model.dtype)
    x = x * m[:, :, None]
    B, T, _ = x.shape
    xp = x @ p["gru_Wx"] + p["gru_b"]  # (B, T, 3H)
    Wh_zr, Wh_n = p["gru_Wh"][:, :2 * H], p["gru_Wh"][:, 2 * H:]
    h = np.zeros((B, H), dtype=model.dtype)
    hs, zs, rs, ns = [h], [], [], []
    for t in range(T):
        zr = sigmoid(xp[:, t, :2 * H] + h @ Wh_zr)
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(xp[:, t, 2 * H:] + (r * h) @ Wh_n)
        h_new = (1.0 - z) * n + z * h
        mt = m[:, t:t + 1]
        h = mt * h_new + (1.0 - mt) * h
        hs.append(h)
        zs.append(z)
        rs.append(r)
        ns.append(n)
    return h, (x, m, hs, zs, rs, ns)


def audio_backward(model: Model, dh: np.ndarray, cache, grads: dict) -> None:
    x, m, hs, zs, rs, ns = cache
    p = model.params
    H = model.config.hidden
    Wh_zr, Wh_n = p["gru_Wh"][:, :2 * H], p["gru_Wh"][:, 2 * H:]
    T = x.shape[1]
    dxp = np.zeros(x.shape[:2] + (3 * H,), dtype=dh.dtype)
    dWh = np.zeros_like(p["gru_Wh"])
    for t in range(T - 1, -1, -1):
        h_prev, z, r, n = hs[t], zs[t], rs[t], ns[t]
        mt = m[:, t:t + 1]
        dh_new = mt * dh
        dh_prev = (1.0 - mt) * dh + dh_new * z
        dz = dh_new * (h_prev - n)
        da_n = dh_new * (1.0 - z) * (1.0 - n * n)
        dWh[:, 2 * H:] += (r * h_prev).T @ da_n
        drh = da_n @ Wh_n.T
        dr = drh * h_prev
        dh_prev += drh * r
        da_zr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        dWh[:, :2 * H] += h_prev.T @ da_zr
        dh_prev += da_zr @ Wh_zr.T
        dxp[:, t, :2 * H] = da_zr
        dxp[:, t, 2 * H:] = da_n
        dh = dh_prev
    B = x.shape[0]
    grads["gru_Wx"] += x.reshape(B * T, -1).T @ dxp.reshape(B * T, -1)
    grads["gru_Wh"] += dWh
    grads["gru_b"] += dxp.sum(axis=(0, 1))


# --- fusion and head -------------------------------------------------------------


def gated_bilinear(ft: np.ndarray, fa: np.ndarray, W2: np.ndarray, b2: np.ndarray):
    sa, st = sigmoid(fa), sigmoid(ft)
    tg, ag = ft * sa, fa * st
    # fm[b,o] = sum_ij tg[b,i] W2[o,i,j] ag[b,j]
    tW = np.tensordot(tg, W2, axes=([1], [1]))  # (B, O, H)
    fm = (tW * ag[:, None, :]).sum(axis=2) + b2
    return fm, (ft, fa, sa, st, tg, ag, tW)


def gated_bilinear_backward(dfm: np.ndarray, W2: np.ndarray, cache):
    ft, fa, sa, st, tg, ag, tW = cache
    B, O = dfm.shape
    outer = (dfm[:, :, None] * tg[:, None, :]).reshape(B, -1)
    dW2 = (outer.T @ ag).reshape(W2.shape)
    dag = (dfm[:, :, None] * tW).sum(axis=1)
    Wa = np.tensordot(ag, W2, axes=([1], [2]))  # (B, O, H)
    dtg = (dfm[:, :, None] * Wa).sum(axis=1)
    dft = dtg * sa + dag * fa * st * (1.0 - st)
    dfa = dag * st + dtg * ft * sa * (1.0 - sa)
    return dft, dfa, dW2, dfm.sum(axis=0)


def mix_rows(x: np.ndarray, mix: Optional[Mix]) -> np.ndarray:
    if mix is None:
        return x
    lam = mix.lam.astype(x.dtype).reshape((-1,) + (1,) * (x.ndim - 1))
    return lam * x + (1.0 - lam) * x[mix.perm]


def unmix_rows(d: np.ndarray, mix: Optional[Mix]) -> np.ndarray:
    if mix is None:
        return d
    lam = mix.lam.astype(d.dtype).reshape((-1,) + (1,) * (d.ndim - 1))
    out = lam * d
    np.add.at(out, mix.perm, (1.0 - lam) * d)
    return out


def forward(model: Model, batch: Batch, mix: Optional[Mix] = None):
    """Class probabilities ``(B, K)`` and a cache for :func:`backward`."""
    cfg, p = model.config, model.params
    cache: dict = {"mix": mix}
    ft = fa = None
    if cfg.uses_text:
        ft, cache["text"] = text_encode(model, batch)
        ft_h = mix_rows(ft, mix)
    if cfg.uses_audio:
        fa, cache["audio"] = audio_encode(model, batch)
        fa_h = mix_rows(fa, mix)
    if cfg.modality == "both":
        feats, cache["fusion"] = gated_bilinear(ft_h, fa_h, p["W2"], p["b2"])
    elif cfg.modality == "text":
        feats = ft_h
    else:
        feats = fa_h
    if cfg.use_timing:
        timing = mix_rows(batch.timing.astype(model.dtype), mix)
        feats = np.concatenate([feats, timing[:, None]], axis=1)
    cache["feats"] = feats
    logits = feats @ p["Wc"].T + p["bc"]
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite activation in forward pass")
    probs = softmax(logits) if cfg.output == "softmax" else sigmoid(logits)
    cache["logits"] = logits
    return probs, cache


def backward(model: Model, cache: dict, dlogits: np.ndarray) -> dict:
    cfg, p = model.config, model.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    feats = cache["feats"]
    grads["Wc"] += dlogits.T @ feats
    grads["bc"] += dlogits.sum(axis=0)
    dfeats = dlogits @ p["Wc"]
    if cfg.use_timing:
        dfeats = dfeats[:, :-1]
    mix = cache["mix"]
    if cfg.modality == "both":
        dft_h, dfa_h, grads["W2"], grads["b2"] = gated_bilinear_backward(dfeats, p["W2"], cache["fusion"])
    elif cfg.modality == "text":
        dft_h, dfa_h = dfeats, None
    else:
        dft_h, dfa_h = None, dfeats
    if cfg.uses_text:
        text_backward(model, unmix_rows(dft_h, mix), cache["text"], grads)
    if cfg.uses_audio:
        audio_backward(model, unmix_rows(dfa_h, mix), cache["audio"], grads)
    return grads


# --- losses -------------------------------------------------------------------------


def bce_terms(y: np.ndarray, p: np.ndarray):
    """Per-sample ``-sum_k y log p + (1 - y) log(1 - p)`` with clamping,
    and its derivative with respect to ``p``."""
    pc = np.clip(p, EPS, 1.0 - EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum(axis=1)
    inside = (p > EPS) & (p < 1.0 - EPS)
    dp = np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0)
    return loss, dp


def dlogits_from_dp(model: Model, probs: np.ndarray, dp: np.ndarray) -> np.ndarray:
    if model.config.output == "softmax":
        return probs * (dp - (dp * probs).sum(axis=1, keepdims=True))
    return dp * probs * (1.0 - probs)


def weighted_loss(model: Model, probs: np.ndarray, targets: np.ndarray,
                  weights: Optional[np.ndarray] = None):
    """Weighted mean of per-sample losses and ``dL/dlogits``.

    With ``weights`` the mean runs over samples of nonzero weight; a
    zero-weight sample contributes neither loss nor gradient.
    """
    per, dp = bce_terms(targets, probs)
    B = len(per)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total == 0:
        return 0.0, np.zeros_like(probs)
    scale = (w / total).astype(probs.dtype)[:, None]
    dlogits = dlogits_from_dp(model, probs, dp * scale)
    dlogits[w == 0] = 0.0
    return float((per * w).sum() / total), dlogits


def predict_proba(model: Model, batch: Batch) -> np.ndarray:
    probs, _ = forward(model, batch, None)
    return probs


def predict(model: Model, batch: Batch) -> np.ndarray:
    """Argmax class per sample; ties go to the lowest index."""
    return predict_proba(model, batch).argmax(axis=1)
