"""Analytic next-token language model: losses, gradients, embeddings, optimizer.

One hidden layer (token embedding -> tanh -> softmax over the vocabulary),
small enough that exact per-sample gradients are cheap, structured enough
that domains with distinct token statistics are separable. Parameters live
in a single flat vector so gradient-space operations (projection, cosine,
preconditioning) are trivial.

Parameter layout: [embedding V*E | hidden weights E*H | hidden bias H |
output weights H*V | output bias V], all float64.

All functions here are pure over immutable state: ``train_step`` returns new
(model, optimizer) values instead of mutating. Per-sample accumulation runs
in batch order so identical inputs reproduce bitwise-identical results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .core import ModelCfg, OptimCfg, Sample, _read_only
from .errors import ColdOptimizer, LengthMismatch, NegativeWeight, NotAdam, TooShort


@lru_cache(maxsize=None)
def _layout(arch: ModelCfg):
    v, e, h = arch.vocab_size, arch.embed_dim, arch.hidden_dim
    sizes = [v * e, e * h, h, h * v, v]
    offsets = np.cumsum([0] + sizes)
    return offsets, sizes


def param_count(arch: ModelCfg) -> int:
    offsets, _ = _layout(arch)
    return int(offsets[-1])


@dataclass(frozen=True, eq=False)
class ModelState:
    arch: ModelCfg
    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.ndim != 1 or p.size != param_count(self.arch):
            raise ValueError(f"params length {p.size} does not match arch {self.arch}")
        if not np.all(np.isfinite(p)):
            raise ValueError("model parameters contain non-finite entries")
        object.__setattr__(self, "params", _read_only(p.copy()))

    def unpack(self):
        """Views (emb, w1, b1, w2, b2) into the flat parameter vector."""
        v, e, h = self.arch.vocab_size, self.arch.embed_dim, self.arch.hidden_dim
        o, _ = _layout(self.arch)
        p = self.params
        return (
            p[o[0]:o[1]].reshape(v, e),
            p[o[1]:o[2]].reshape(e, h),
            p[o[2]:o[3]],
            p[o[3]:o[4]].reshape(h, v),
            p[o[4]:o[5]],
        )


@dataclass(frozen=True, eq=False)
class OptimizerState:
    kind: str
    hyper: OptimCfg
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Mean hidden activation of a sample, with its Euclidean norm cached."""

    values: np.ndarray
    norm: float

    def __post_init__(self):
        vals = _read_only(np.asarray(self.values, dtype=np.float64).copy())
        object.__setattr__(self, "values", vals)
        if abs(self.norm - float(np.linalg.norm(vals))) > 1e-9:
            raise ValueError("cached norm disagrees with values")

    @classmethod
    def from_values(cls, values: np.ndarray) -> "EmbeddingVector":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, float(np.linalg.norm(values)))


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Deep snapshot of (model, optimizer); restore() is a bitwise inverse."""

    arch: ModelCfg
    params: np.ndarray
    opt_kind: str
    opt_hyper: OptimCfg
    opt_m: Optional[np.ndarray]
    opt_v: Optional[np.ndarray]
    opt_t: int


def init_model(arch: ModelCfg, rng: np.random.Generator, scale: float = 0.1) -> ModelState:
    """Gaussian-initialized model; ``scale=0`` gives the uniform-logits model."""
    return ModelState(arch, rng.normal(0.0, 1.0, size=param_count(arch)) * scale)


def zero_model(arch: ModelCfg) -> ModelState:
    return ModelState(arch, np.zeros(param_count(arch)))


def init_optimizer(cfg: OptimCfg, n_params: int) -> OptimizerState:
    if cfg.kind == "adam":
        return OptimizerState("adam", cfg, np.zeros(n_params), np.zeros(n_params), 0)
    return OptimizerState("sgd", cfg, None, None, 0)


def _check_sample(model: ModelState, s: Sample) -> None:
    if len(s) < 2:
        raise TooShort(f"sample {s.id} has {len(s)} token(s); need >= 2 for a next-token target")
    if int(s.token_ids.max()) >= model.arch.vocab_size:
        raise ValueError(f"sample {s.id} has tokens outside vocab of size {model.arch.vocab_size}")


def _hidden(model: ModelState, tokens: np.ndarray) -> np.ndarray:
    emb, w1, b1, _, _ = model.unpack()
    return np.tanh(emb[tokens] @ w1 + b1)


def _log_probs(hidden: np.ndarray, w2: np.ndarray, b2: np.ndarray):
    logits = hidden @ w2 + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return shifted, log_z  # log p = shifted - log_z


def per_sample_loss(model: ModelState, s: Sample) -> float:
    """Mean next-token cross-entropy over positions 1..len-1."""
    _check_sample(model, s)
    tokens = s.token_ids
    _, _, _, w2, b2 = model.unpack()
    hid = _hidden(model, tokens[:-1])
    shifted, log_z = _log_probs(hid, w2, b2)
    targets = tokens[1:]
    rows = np.arange(targets.size)
    return float(np.mean(log_z - shifted[rows, targets]))


def batch_losses(model: ModelState, batch: Sequence[Sample]) -> np.ndarray:
    return np.array([per_sample_loss(model, s) for s in batch])


def _loss_and_grad(model: ModelState, s: Sample):
    _check_sample(model, s)
    tokens = s.token_ids
    emb, w1, b1, w2, b2 = model.unpack()
    inputs = tokens[:-1]
    targets = tokens[1:]
    n_pos = inputs.size

    x = emb[inputs]                       # (P, E)
    hid = np.tanh(x @ w1 + b1)            # (P, H)
    shifted, log_z = _log_probs(hid, w2, b2)
    rows = np.arange(n_pos)
    loss = float(np.mean(log_z - shifted[rows, targets]))

    probs = np.exp(shifted - log_z[:, None])
    d_logits = probs
    d_logits[rows, targets] -= 1.0
    d_logits /= n_pos                     # gradient of the positional mean

    d_w2 = hid.T @ d_logits
    d_b2 = d_logits.sum(axis=0)
    d_hid = d_logits @ w2.T
    d_z1 = d_hid * (1.0 - hid * hid)
    d_w1 = x.T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    d_x = d_z1 @ w1.T
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, inputs, d_x)

    grad = np.concatenate([d_emb.ravel(), d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])
    return loss, grad


def per_sample_gradient(model: ModelState, s: Sample) -> np.ndarray:
    """Exact gradient of ``per_sample_loss`` w.r.t. the flat parameter vector."""
    return _loss_and_grad(model, s)[1]


def embed(model: ModelState, s: Sample) -> EmbeddingVector:
    """Sentence embedding: mean hidden activation over all token positions."""
    if int(s.token_ids.max()) >= model.arch.vocab_size:
        raise ValueError(f"sample {s.id} has tokens outside vocab of size {model.arch.vocab_size}")
    return EmbeddingVector.from_values(_hidden(model, s.token_ids).mean(axis=0))


def sgd_step(model: ModelState, lr: float, grad: np.ndarray) -> ModelState:
    return ModelState(model.arch, model.params - lr * grad)


def train_step(
    model: ModelState,
    opt: OptimizerState,
    batch: Sequence[Sample],
    weights: Sequence[float],
):
    """One optimizer step on the gradient of (sum_i w_i * loss_i) / |batch|.

    Returns ``(model', opt', weighted_mean_loss)``. Accumulation runs in batch
    order, so all-ones weights reproduce the unweighted step bitwise.
    """
    if len(batch) == 0:
        raise LengthMismatch("batch must be non-empty")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(batch),):
        raise LengthMismatch(f"got {w.size} weights for a batch of {len(batch)}")
    if np.any(w < 0.0):
        raise NegativeWeight(f"negative weights: {w[w < 0.0]}")

    n = len(batch)
    grad = np.zeros_like(model.params)
    wloss = 0.0
    for wi, s in zip(w, batch):
        loss_i, g_i = _loss_and_grad(model, s)
        grad += wi * g_i
        wloss += wi * loss_i
    grad /= n
    wloss /= n

    cfg = opt.hyper
    if opt.kind == "sgd":
        new_model = ModelState(model.arch, model.params - cfg.learning_rate * grad)
        new_opt = OptimizerState("sgd", cfg, None, None, opt.t + 1)
    else:
        t = opt.t + 1
        m = cfg.beta1 * opt.m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * opt.v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        new_model = ModelState(model.arch, model.params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps))
        new_opt = OptimizerState("adam", cfg, m, v, t)
    return new_model, new_opt, float(wloss)


def adam_precondition(grad: np.ndarray, opt: OptimizerState) -> np.ndarray:
    """Bias-corrected Adam direction for a gradient, using the current (m, v).

    Computes the direction Adam *would* move in if this gradient were applied
    at step t+1, without touching optimizer state.
    """
    if opt.kind != "adam":
        raise NotAdam(f"adam preconditioning requested on a {opt.kind!r} optimizer")
    if opt.t < 1:
        raise ColdOptimizer("adam preconditioning needs at least one completed optimizer step")
    cfg = opt.hyper
    t = opt.t + 1
    m = (cfg.beta1 * opt.m + (1.0 - cfg.beta1) * grad) / (1.0 - cfg.beta1 ** t)
    v = (cfg.beta2 * opt.v + (1.0 - cfg.beta2) * grad * grad) / (1.0 - cfg.beta2 ** t)
    return m / (np.sqrt(v) + cfg.eps)


def snapshot(model: ModelState, opt: OptimizerState) -> Checkpoint:
    return Checkpoint(
        arch=model.arch,
        params=model.params.copy(),
        opt_kind=opt.kind,
        opt_hyper=opt.hyper,
        opt_m=None if opt.m is None else opt.m.copy(),
        opt_v=None if opt.v is None else opt.v.copy(),
        opt_t=opt.t,
    )


def restore(ckpt: Checkpoint):
    model = ModelState(ckpt.arch, ckpt.params.copy())
    opt = OptimizerState(
        ckpt.opt_kind,
        ckpt.opt_hyper,
        None if ckpt.opt_m is None else ckpt.opt_m.copy(),
        None if ckpt.opt_v is None else ckpt.opt_v.copy(),
        ckpt.opt_t,
    )
    return model, opt


def state_digest(model: ModelState, opt: OptimizerState) -> str:
    """Digest of all mutable numeric state; used to detect illegal mutation."""
    h = hashlib.sha256()
    h.update(model.params.tobytes())
    h.update(str(opt.t).encode())
    for arr in (opt.m, opt.v):
        h.update(b"-" if arr is None else arr.tobytes())
    return h.hexdigest()


def checkpoint_digest(ckpt: Checkpoint) -> str:
    h = hashlib.sha256()
    h.update(repr(ckpt.arch).encode())
    h.update(ckpt.params.tobytes())
    h.update(ckpt.opt_kind.encode())
    h.update(str(ckpt.opt_t).encode())
    for arr in (ckpt.opt_m, ckpt.opt_v):
        h.update(b"-" if arr is None else arr.tobytes())
    return h.hexdigest()
