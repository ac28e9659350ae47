"""Sample-scoring strategies and top-k selection.

Six scoring families: current loss, loss progress since a reference
checkpoint, gradient-similarity influence, virtual-update probing,
k-nearest-neighbor embedding similarity, and retrieval + kernel-density
scoring. All are pure functions over immutable (model, pool, validation)
snapshots; ties and reductions use fixed orders so results are reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Sample, _read_only
from .errors import (
    BadParams,
    ColdOptimizer,
    EmptyValidation,
    KTooLarge,
    NonFinite,
    NonFiniteMetric,
    NotAdam,
)
from .model import (
    Checkpoint,
    EmbeddingVector,
    ModelState,
    OptimizerState,
    adam_precondition,
    per_sample_gradient,
    per_sample_loss,
    restore,
    sgd_step,
    snapshot,
)

logger = logging.getLogger(__name__)

_GRAD_CHUNK = 128


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Per-sample scores aligned with pool ids; higher means select first."""

    ids: np.ndarray
    scores: np.ndarray
    method: str

    def __post_init__(self):
        ids = _read_only(np.asarray(self.ids, dtype=np.int64).copy())
        scores = np.asarray(self.scores, dtype=np.float64).copy()
        if ids.shape != scores.shape or ids.ndim != 1:
            raise ValueError("ids and scores must be 1-D and aligned")
        if not np.all(np.isfinite(scores)):
            raise NonFinite(f"{self.method}: non-finite scores")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", _read_only(scores))

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass(frozen=True)
class InfluenceParams:
    """Settings for gradient-similarity scoring.

    ``projection_dim=None`` disables the random projection (exact cosine).
    """

    projection_dim: Optional[int] = 512
    projection_seed: int = 0
    preconditioning: str = "adam"
    aggregation: str = "mean_gradient"

    def __post_init__(self):
        if self.projection_dim is not None and self.projection_dim < 1:
            raise BadParams(f"projection_dim must be >= 1, got {self.projection_dim}")
        if self.preconditioning not in ("none", "adam"):
            raise BadParams(f"preconditioning must be 'none' or 'adam', got {self.preconditioning!r}")
        if self.aggregation not in ("mean_gradient", "max_cosine"):
            raise BadParams(f"aggregation must be 'mean_gradient' or 'max_cosine', got {self.aggregation!r}")


@dataclass(frozen=True)
class TsdsParams:
    """Retrieval + KDE scoring parameters."""

    max_K: int = 5000
    kde_K: int = 1000
    sigma: float = 0.75
    tradeoff_alpha: float = 0.6
    C: float = 5.0

    def __post_init__(self):
        if self.max_K < 1 or self.kde_K < 1:
            raise BadParams("max_K and kde_K must be >= 1")
        if self.sigma <= 0.0:
            raise BadParams(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.tradeoff_alpha <= 1.0):
            raise BadParams(f"tradeoff_alpha must lie in [0, 1], got {self.tradeoff_alpha}")
        if self.C <= 0.0:
            raise BadParams(f"C must be positive, got {self.C}")


class SignProjection:
    """Seeded Rademacher sketch, applied block-wise over input coordinates.

    The full sign matrix (dim_out x dim_in) is never materialized; blocks of
    columns are regenerated from the seed on every call, so projecting is a
    deterministic function of (seed, dim_in, dim_out).
    """

    def __init__(self, dim_out: int, dim_in: int, seed: int, block: int = 2048):
        self.dim_out = dim_out
        self.dim_in = dim_in
        self.seed = seed
        self.block = block

    def project(self, mat: np.ndarray) -> np.ndarray:
        mat = np.atleast_2d(mat)
        if mat.shape[1] != self.dim_in:
            raise ValueError(f"expected {self.dim_in} columns, got {mat.shape[1]}")
        rng = np.random.default_rng(self.seed)
        out = np.zeros((mat.shape[0], self.dim_out))
        for start in range(0, self.dim_in, self.block):
            stop = min(start + self.block, self.dim_in)
            signs = rng.integers(0, 2, size=(stop - start, self.dim_out)).astype(np.float64) * 2.0 - 1.0
            out += mat[:, start:stop] @ signs
        return out / np.sqrt(self.dim_out)


def _pool_ids(pool: Sequence[Sample]) -> np.ndarray:
    return np.array([s.id for s in pool], dtype=np.int64)


def score_loss(model: ModelState, pool: Sequence[Sample]) -> ScoreVector:
    """Score = current per-sample loss; hardest samples rank first."""
    if len(pool) == 0:
        raise ValueError("pool must be non-empty")
    scores = np.array([per_sample_loss(model, s) for s in pool])
    return ScoreVector(_pool_ids(pool), scores, "loss")


def score_delta_loss(
    model: ModelState,
    ref_snapshot: Checkpoint,
    pool: Sequence[Sample],
    hardest_first: bool = False,
) -> ScoreVector:
    """Score = loss under the reference snapshot minus current loss.

    Positive scores mark samples the model has learned since the reference;
    ``hardest_first`` flips the sign to prioritize un-learned samples.
    """
    ref_model, _ = restore(ref_snapshot)
    scores = np.array([per_sample_loss(ref_model, s) - per_sample_loss(model, s) for s in pool])
    if hardest_first:
        scores = -scores
    return ScoreVector(_pool_ids(pool), scores, "delta_loss")


def _gradient_rows(
    model: ModelState,
    samples: Sequence[Sample],
    opt: OptimizerState,
    preconditioning: str,
    proj: Optional[SignProjection],
) -> np.ndarray:
    """Per-sample (optionally preconditioned, optionally sketched) gradients."""
    rows = []
    chunk = []

    def flush():
        if not chunk:
            return
        block = np.stack(chunk)
        rows.append(proj.project(block) if proj is not None else block)
        chunk.clear()

    for s in samples:
        g = per_sample_gradient(model, s)
        if preconditioning == "adam":
            g = adam_precondition(g, opt)
        chunk.append(g)
        if len(chunk) >= _GRAD_CHUNK:
            flush()
    flush()
    return np.concatenate(rows, axis=0)


def _cosine_rows(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Row-wise cosine against one vector; zero vectors score 0 by convention."""
    v_norm = float(np.linalg.norm(vec))
    row_norms = np.linalg.norm(mat, axis=1)
    out = np.zeros(mat.shape[0])
    if v_norm == 0.0:
        return out
    nz = row_norms > 0.0
    out[nz] = (mat[nz] @ vec) / (row_norms[nz] * v_norm)
    return out


def score_influence(
    model: ModelState,
    opt: OptimizerState,
    pool: Sequence[Sample],
    val_set: Sequence[Sample],
    params: InfluenceParams = InfluenceParams(),
) -> ScoreVector:
    """Cosine similarity between pool gradients and the validation gradient.

    Gradients are optionally Adam-preconditioned, then sketched with a seeded
    Rademacher projection. Under ``mean_gradient`` the target is the mean
    validation gradient; under ``max_cosine`` each pool sample takes its best
    match over individual validation gradients.
    """
    if len(val_set) == 0:
        raise EmptyValidation("influence scoring needs a non-empty validation set")
    if params.preconditioning == "adam":
        if opt.kind != "adam":
            raise NotAdam("influence preconditioning='adam' requires an adam optimizer")
        if opt.t < 1:
            raise ColdOptimizer("influence preconditioning='adam' requires optimizer step t >= 1")

    proj = None
    if params.projection_dim is not None:
        proj = SignProjection(params.projection_dim, model.params.size, params.projection_seed)

    pool_g = _gradient_rows(model, pool, opt, params.preconditioning, proj)
    val_g = _gradient_rows(model, val_set, opt, params.preconditioning, proj)

    if params.aggregation == "mean_gradient":
        scores = _cosine_rows(pool_g, val_g.mean(axis=0))
    else:
        cols = [_cosine_rows(pool_g, val_g[j]) for j in range(val_g.shape[0])]
        scores = np.max(np.stack(cols, axis=1), axis=1)
    return ScoreVector(_pool_ids(pool), scores, "influence")


def mean_loss_metric(val_set: Sequence[Sample]) -> Callable[[ModelState], float]:
    """Scalar evaluator: mean per-sample loss over a validation set."""

    def metric(model: ModelState) -> float:
        return float(np.mean([per_sample_loss(model, s) for s in val_set]))

    return metric


def top1_accuracy_metric(val_set: Sequence[Sample]) -> Callable[[ModelState], float]:
    """Non-differentiable scalar evaluator: next-token argmax accuracy."""

    def metric(model: ModelState) -> float:
        hits = 0
        total = 0
        for s in val_set:
            tokens = s.token_ids
            emb, w1, b1, w2, b2 = model.unpack()
            hid = np.tanh(emb[tokens[:-1]] @ w1 + b1)
            pred = np.argmax(hid @ w2 + b2, axis=1)
            hits += int(np.sum(pred == tokens[1:]))
            total += tokens.size - 1
        return hits / total

    return metric


def score_probe(
    model: ModelState,
    opt: OptimizerState,
    pool: Sequence[Sample],
    val_metric_fn: Callable[[ModelState], float],
    probe_lr: float,
) -> ScoreVector:
    """Score = metric(before) - metric(after) for a single-sample virtual update.

    Each probe takes one plain SGD step at ``probe_lr`` on the sample alone,
    evaluates the metric, and restores the snapshot; the caller's (model, opt)
    are left bitwise unchanged. Works for any scalar metric, including
    non-differentiable ones.
    """
    base = snapshot(model, opt)
    before = float(val_metric_fn(model))
    if not np.isfinite(before):
        raise NonFiniteMetric(f"metric returned {before!r} on the unperturbed model")
    scores = np.empty(len(pool))
    for i, s in enumerate(pool):
        probe_model, _ = restore(base)
        g = per_sample_gradient(probe_model, s)
        after = float(val_metric_fn(sgd_step(probe_model, probe_lr, g)))
        if not np.isfinite(after):
            raise NonFiniteMetric(f"metric returned {after!r} after probing sample {s.id}")
        scores[i] = before - after
    return ScoreVector(_pool_ids(pool), scores, "probe")


def _as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        return np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    return np.stack([e.values if isinstance(e, EmbeddingVector) else np.asarray(e, dtype=np.float64) for e in embeddings])


def score_knn(pool_embeddings, val_embeddings, k: int, pool_ids: Optional[np.ndarray] = None) -> ScoreVector:
    """Mean cosine similarity to the k nearest validation embeddings.

    Neighbors are ranked by cosine, ties broken by lower validation index.
    Zero embeddings take cosine 0 against everything.
    """
    pool_m = _as_matrix(pool_embeddings)
    val_m = _as_matrix(val_embeddings)
    if val_m.shape[0] == 0:
        raise EmptyValidation("knn scoring needs validation embeddings")
    if k < 1 or k > val_m.shape[0]:
        raise KTooLarge(f"k={k} outside [1, {val_m.shape[0]}]")

    pool_norms = np.linalg.norm(pool_m, axis=1)
    val_norms = np.linalg.norm(val_m, axis=1)
    denom = np.outer(pool_norms, val_norms)
    cos = np.zeros((pool_m.shape[0], val_m.shape[0]))
    nz = denom > 0.0
    raw = pool_m @ val_m.T
    cos[nz] = raw[nz] / denom[nz]

    val_order = np.arange(val_m.shape[0])
    scores = np.empty(pool_m.shape[0])
    for i in range(pool_m.shape[0]):
        order = np.lexsort((val_order, -cos[i]))
        scores[i] = cos[i, order[:k]].mean()
    ids = pool_ids if pool_ids is not None else np.arange(pool_m.shape[0])
    return ScoreVector(ids, scores, "knn")


def score_tsds(pool_embeddings, val_embeddings, params: TsdsParams = TsdsParams(), pool_ids: Optional[np.ndarray] = None) -> ScoreVector:
    """Retrieval mass with a density penalty, in embedding space.

    1. Each validation query contributes Gaussian-kernel relevance mass
       ``exp(-d^2 / (2 sigma^2))`` to its (up to) ``max_K`` nearest pool
       points by Euclidean distance.
    2. Every pool point with nonzero mass gets a KDE density estimate from
       its ``kde_K`` nearest pool neighbors (itself excluded).
    3. score = alpha * mass / (1 + C * density) + (1 - alpha) * mass;
       zero-mass points score 0.
    """
    pool_m = _as_matrix(pool_embeddings)
    val_m = _as_matrix(val_embeddings)
    n = pool_m.shape[0]
    if n == 0:
        raise ValueError("pool must be non-empty")
    if val_m.shape[0] == 0:
        raise EmptyValidation("retrieval scoring needs validation embeddings")
    logger.info(
        "tsds params: max_K=%d kde_K=%d sigma=%g tradeoff_alpha=%g C=%g",
        params.max_K, params.kde_K, params.sigma, params.tradeoff_alpha, params.C,
    )

    inv_two_sigma_sq = 1.0 / (2.0 * params.sigma * params.sigma)
    pool_sq = np.sum(pool_m * pool_m, axis=1)

    # Step 1: per-query retrieval mass.
    mass = np.zeros(n)
    val_sq = np.sum(val_m * val_m, axis=1)
    d2_pool_val = np.maximum(pool_sq[:, None] - 2.0 * (pool_m @ val_m.T) + val_sq[None, :], 0.0)
    retained = min(params.max_K, n)
    pool_order = np.arange(n)
    for j in range(val_m.shape[0]):
        col = d2_pool_val[:, j]
        if retained < n:
            idx = np.lexsort((pool_order, col))[:retained]
        else:
            idx = pool_order
        mass[idx] += np.exp(-col[idx] * inv_two_sigma_sq)

    # Step 2: KDE density over pool neighbors for points that matter.
    needs_density = mass > 0.0
    density = np.zeros(n)
    if params.tradeoff_alpha > 0.0 and np.any(needs_density):
        kde_k = min(params.kde_K, n - 1)
        if kde_k > 0:
            d2_pool = np.maximum(pool_sq[:, None] - 2.0 * (pool_m @ pool_m.T) + pool_sq[None, :], 0.0)
            np.fill_diagonal(d2_pool, np.inf)
            for i in np.nonzero(needs_density)[0]:
                row = d2_pool[i]
                idx = np.lexsort((pool_order, row))[:kde_k]
                density[i] = np.exp(-row[idx] * inv_two_sigma_sq).sum() / kde_k

    scores = params.tradeoff_alpha * mass / (1.0 + params.C * density) + (1.0 - params.tradeoff_alpha) * mass
    scores[~needs_density] = 0.0
    ids = pool_ids if pool_ids is not None else np.arange(n)
    return ScoreVector(ids, scores, "tsds")


def select(scores: ScoreVector, k: int) -> list:
    """Ids of the k highest scores, descending; ties broken by ascending id."""
    if k < 0 or k > len(scores):
        raise KTooLarge(f"k={k} outside [0, {len(scores)}]")
    order = np.lexsort((scores.ids, -scores.scores))
    return [int(i) for i in scores.ids[order[:k]]]
