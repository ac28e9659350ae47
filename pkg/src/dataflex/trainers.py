"""Training-loop orchestration: component registry, schedule, and the four
run modes (static baseline, dynamic selection, dynamic mixing, dynamic
reweighting).

All modes share one loop and one batch-sampling path (domains drawn from a
policy, then uniform within the domain), so degenerate configurations
(select-all, uniform weights, static mixer) reproduce the static baseline
bitwise under the same seed. Components never touch model state: a digest
guard around every invocation enforces that the optimizer step is the only
mutation point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    Corpus,
    MetricsRecord,
    MixtureWeights,
    RunConfig,
    Schedule,
    empirical_proportions,
    id_set_digest,
    validate_config,
)
from .errors import BadParams, DuplicateName, UnknownComponent
from .evaluation import eval_per_domain
from .mixers import (
    OdmParams,
    odm_init,
    odm_update,
    run_doremi_pipeline,
    sample_batch,
)
from .model import (
    batch_losses,
    embed,
    init_model,
    init_optimizer,
    snapshot,
    state_digest,
    train_step,
)
from .selectors import (
    InfluenceParams,
    ScoreVector,
    TsdsParams,
    mean_loss_metric,
    score_delta_loss,
    score_influence,
    score_knn,
    score_loss,
    score_probe,
    score_tsds,
    select,
    top1_accuracy_metric,
)
from .weighters import WeightStrategy, apply as weighter_apply

COMPONENT_KINDS = ("selector", "mixer", "weighter")

_TRAINER_BY_TYPE = {
    "static": "static",
    "dynamic_select": "select",
    "dynamic_mix": "mix",
    "dynamic_weight": "weight",
}


class ComponentRegistry:
    """String-keyed factories for selectors, mixers, and weighters."""

    def __init__(self):
        self._factories = {}

    def register(self, kind: str, name: str, factory: Callable) -> None:
        if kind not in COMPONENT_KINDS:
            raise BadParams(f"unknown component kind {kind!r}")
        if not name:
            raise BadParams("component name must be non-empty")
        if (kind, name) in self._factories:
            raise DuplicateName(f"{kind} {name!r} is already registered")
        self._factories[(kind, name)] = factory

    def resolve(self, kind: str, name: str, params: Optional[dict] = None):
        try:
            factory = self._factories[(kind, name)]
        except KeyError:
            known = sorted(n for k, n in self._factories if k == kind)
            raise UnknownComponent(f"no {kind} named {name!r}; known: {known}") from None
        return factory(dict(params or {}))

    def names(self, kind: str) -> list:
        return sorted(n for k, n in self._factories if k == kind)


def invocation_steps(s: Schedule) -> list:
    """Global-step values at which a scheduled component fires.

    The component fires when the step counter reaches each value, before that
    step's optimizer update (a value of 0 fires before the very first step).
    """
    return [s.warmup_step + j * s.update_step for j in range(s.update_times)]


def _pop_params(params: dict, keys: Sequence[str]) -> dict:
    out = {}
    for key in keys:
        if key in params:
            out[key] = params.pop(key)
    return out


def _reject_unknown(params: dict, component: str) -> None:
    if params:
        raise BadParams(f"unknown parameter(s) for {component}: {sorted(params)}")


@dataclass
class SelectionContext:
    """Inputs handed to a selector at an invocation step."""

    model: object
    opt: object
    pool: Sequence
    val: Sequence
    rng: np.random.Generator
    ref_checkpoint: object
    embeddings: Callable  # () -> (pool_matrix, val_matrix), frozen at first call


class LossSelector:
    def score(self, ctx: SelectionContext) -> ScoreVector:
        return score_loss(ctx.model, ctx.pool)


class DeltaLossSelector:
    def __init__(self, hardest_first: bool = False):
        self.hardest_first = hardest_first

    def score(self, ctx: SelectionContext) -> ScoreVector:
        return score_delta_loss(ctx.model, ctx.ref_checkpoint, ctx.pool, hardest_first=self.hardest_first)


class InfluenceSelector:
    def __init__(self, params: InfluenceParams):
        self.params = params

    def score(self, ctx: SelectionContext) -> ScoreVector:
        return score_influence(ctx.model, ctx.opt, ctx.pool, ctx.val, self.params)


class ProbeSelector:
    def __init__(self, probe_lr: float = 1e-3, metric: str = "val_loss"):
        if metric not in ("val_loss", "top1_accuracy"):
            raise BadParams(f"unknown probe metric {metric!r}")
        self.probe_lr = probe_lr
        self.metric = metric

    def score(self, ctx: SelectionContext) -> ScoreVector:
        factory = mean_loss_metric if self.metric == "val_loss" else top1_accuracy_metric
        return score_probe(ctx.model, ctx.opt, ctx.pool, factory(ctx.val), self.probe_lr)


class KnnSelector:
    def __init__(self, k: int = 10):
        self.k = k

    def score(self, ctx: SelectionContext) -> ScoreVector:
        pool_m, val_m = ctx.embeddings()
        ids = np.array([s.id for s in ctx.pool], dtype=np.int64)
        return score_knn(pool_m, val_m, self.k, pool_ids=ids)


class TsdsSelector:
    def __init__(self, params: TsdsParams):
        self.params = params

    def score(self, ctx: SelectionContext) -> ScoreVector:
        pool_m, val_m = ctx.embeddings()
        ids = np.array([s.id for s in ctx.pool], dtype=np.int64)
        return score_tsds(pool_m, val_m, self.params, pool_ids=ids)


class RandomSelector:
    def score(self, ctx: SelectionContext) -> ScoreVector:
        ids = np.array([s.id for s in ctx.pool], dtype=np.int64)
        return ScoreVector(ids, ctx.rng.random(len(ctx.pool)), "random")


def _selector_factory(name: str):
    def build(params: dict):
        if name == "loss":
            _reject_unknown(params, "loss selector")
            return LossSelector()
        if name == "delta_loss":
            opts = _pop_params(params, ("hardest_first",))
            _reject_unknown(params, "delta_loss selector")
            return DeltaLossSelector(bool(opts.get("hardest_first", False)))
        if name == "less":
            opts = _pop_params(params, ("projection_dim", "projection_seed", "preconditioning", "aggregation"))
            _reject_unknown(params, "less selector")
            dim = opts.get("projection_dim", 512)
            return InfluenceSelector(
                InfluenceParams(
                    projection_dim=None if dim in (None, 0) else int(dim),
                    projection_seed=int(opts.get("projection_seed", 0)),
                    preconditioning=str(opts.get("preconditioning", "adam")),
                    aggregation=str(opts.get("aggregation", "mean_gradient")),
                )
            )
        if name == "nice":
            opts = _pop_params(params, ("probe_lr", "metric"))
            _reject_unknown(params, "nice selector")
            return ProbeSelector(float(opts.get("probe_lr", 1e-3)), str(opts.get("metric", "val_loss")))
        if name == "near":
            opts = _pop_params(params, ("k",))
            _reject_unknown(params, "near selector")
            return KnnSelector(int(opts.get("k", 10)))
        if name == "tsds":
            opts = _pop_params(params, ("max_k", "kde_k", "sigma", "tradeoff_alpha", "c"))
            _reject_unknown(params, "tsds selector")
            return TsdsSelector(
                TsdsParams(
                    max_K=int(opts.get("max_k", 5000)),
                    kde_K=int(opts.get("kde_k", 1000)),
                    sigma=float(opts.get("sigma", 0.75)),
                    tradeoff_alpha=float(opts.get("tradeoff_alpha", 0.6)),
                    C=float(opts.get("c", 5.0)),
                )
            )
        if name == "random":
            _reject_unknown(params, "random selector")
            return RandomSelector()
        raise UnknownComponent(name)

    return build


class StaticMixer:
    name = "static"

    def update(self, policy, window_losses, rng):
        return policy, None


class RandomMixer:
    name = "random"

    def update(self, policy, window_losses, rng):
        k = len(policy)
        return MixtureWeights(rng.dirichlet(np.ones(k))), None


class OdmMixer:
    name = "odm"

    def __init__(self, params: OdmParams):
        self.params = params
        self.state = None

    def update(self, policy, window_losses, rng):
        if self.state is None:
            self.state = odm_init(policy, self.params)
        self.state = odm_update(self.state, window_losses, self.params)
        rewards = np.maximum(self.state.ema_loss, self.params.clip_threshold) / self.params.reward_scale
        return self.state.policy, [float(r) for r in rewards]


def _mixer_factory(name: str):
    def build(params: dict):
        if name == "static":
            _reject_unknown(params, "static mixer")
            return StaticMixer()
        if name == "random":
            _reject_unknown(params, "random mixer")
            return RandomMixer()
        if name == "odm":
            opts = _pop_params(params, ("ema_decay", "reward_scale", "eps_min", "clip_threshold"))
            _reject_unknown(params, "odm mixer")
            return OdmMixer(
                OdmParams(
                    ema_decay=float(opts.get("ema_decay", 0.90)),
                    reward_scale=float(opts.get("reward_scale", 15.0)),
                    eps_min=float(opts.get("eps_min", 0.01)),
                    clip_threshold=float(opts.get("clip_threshold", -10.0)),
                )
            )
        raise UnknownComponent(name)

    return build


def _weighter_factory(params: dict) -> WeightStrategy:
    opts = _pop_params(params, ("strategy", "temperature"))
    _reject_unknown(params, "loss weighter")
    return WeightStrategy(kind=str(opts.get("strategy", "softmax")), temperature=float(opts.get("temperature", 1.0)))


def _register_builtins(reg: ComponentRegistry) -> None:
    for name in ("loss", "delta_loss", "less", "nice", "near", "tsds", "random"):
        reg.register("selector", name, _selector_factory(name))
    for name in ("static", "random", "odm"):
        reg.register("mixer", name, _mixer_factory(name))
    # The doremi mixer is pipeline-backed and handled by the mix trainer; it
    # still resolves so configs can name it uniformly.
    reg.register("mixer", "doremi", lambda params: StaticMixer())
    reg.register("weighter", "loss", _weighter_factory)


DEFAULT_REGISTRY = ComponentRegistry()
_register_builtins(DEFAULT_REGISTRY)


@dataclass
class SelectionEvent:
    step: int
    ids: tuple
    digest: int


@dataclass
class RunResult:
    model: object
    opt: object
    metrics: list
    invocations: list = field(default_factory=list)
    selections: list = field(default_factory=list)
    weight_trajectory: Optional[list] = None
    weight_stats: Optional[list] = None

    @property
    def final_val_loss(self) -> float:
        return self.metrics[-1].overall_val_loss if self.metrics else float("nan")


class _EmbeddingCache:
    """Embeds pool and validation once, with the model current at first use.

    Distribution-based selectors are offline methods: their embedding space is
    computed once per run, not re-derived after every model update.
    """

    def __init__(self, pool, val):
        self.pool = pool
        self.val = val
        self._frozen = None

    def provider(self, model):
        def get():
            if self._frozen is None:
                pool_m = np.stack([embed(model, s).values for s in self.pool])
                val_m = np.stack([embed(model, s).values for s in self.val])
                self._frozen = (pool_m, val_m)
            return self._frozen

        return get


def _domain_view(corpus: Corpus, ids) -> dict:
    view = {d: [] for d in range(corpus.num_domains)}
    for i in ids:
        view[corpus.by_id(int(i)).domain_id].append(int(i))
    return {d: np.array(sorted(v), dtype=np.int64) for d, v in view.items()}


def run_training(cfg: RunConfig, corpus: Corpus, val: Corpus, registry: Optional[ComponentRegistry] = None) -> RunResult:
    """Run any of the four training modes; see the module docstring.

    The step counter is 1-based: a schedule point p fires before optimizer
    step p (p=0 fires before step 1), so the number of invocations equals
    min(update_times, number of schedule points <= max_steps).
    """
    registry = registry or DEFAULT_REGISTRY
    validate_config(cfg, corpus)
    mode = _TRAINER_BY_TYPE[cfg.train_type]

    kids = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_init = np.random.default_rng(kids[0])
    rng_sample = np.random.default_rng(kids[1])
    rng_component = np.random.default_rng(kids[2])

    model = init_model(cfg.model_cfg, rng_init)
    opt = init_optimizer(cfg.optim_cfg, model.params.size)

    params = dict(cfg.component_params)
    init_policy = cfg.init_mixture_proportions or empirical_proportions(corpus)
    policy = init_policy.weights
    view = None  # None means the full corpus
    selection_digest = 0
    result = RunResult(model=model, opt=opt, metrics=[])

    selector = None
    select_k = None
    accumulate = False
    active_ids = None
    ref_checkpoint = snapshot(model, opt)
    emb_cache = _EmbeddingCache(list(corpus.samples), list(val.samples))

    mixer = None
    window_sum = np.zeros(corpus.num_domains)
    window_count = np.zeros(corpus.num_domains, dtype=np.int64)

    strategy = None

    if mode == "select":
        ratio = float(params.pop("ratio", 0.5))
        if not (0.0 < ratio <= 1.0):
            raise BadParams(f"selection ratio must lie in (0, 1], got {ratio}")
        accumulate = bool(params.pop("accumulate", False))
        select_k = int(round(ratio * len(corpus)))
        selector = registry.resolve("selector", cfg.component_name, params)
    elif mode == "mix":
        if cfg.component_name == "doremi":
            pipeline = run_doremi_pipeline(cfg, corpus, val)
            policy = pipeline.weights.weights
            result.weight_trajectory = list(pipeline.trajectory)
            mixer = StaticMixer()
        else:
            mixer = registry.resolve("mixer", cfg.component_name, params)
            result.weight_trajectory = []
    elif mode == "weight":
        strategy = registry.resolve("weighter", cfg.component_name, params)
        result.weight_stats = []

    fire_steps = {}
    if mode in ("select", "mix"):
        for p in invocation_steps(cfg.schedule):
            fire_steps[max(p, 1)] = p

    all_ids = {int(s.id) for s in corpus.samples}
    wants_domain_losses = mode == "mix" and isinstance(mixer, OdmMixer)
    needs_window_reset = False

    def invoke_component(step: int):
        nonlocal policy, view, selection_digest, active_ids, ref_checkpoint, needs_window_reset
        guard = state_digest(model, opt)
        if mode == "select":
            ctx = SelectionContext(
                model=model,
                opt=opt,
                pool=list(corpus.samples),
                val=list(val.samples),
                rng=rng_component,
                ref_checkpoint=ref_checkpoint,
                embeddings=emb_cache.provider(model),
            )
            chosen = select(selector.score(ctx), select_k)
            if accumulate and active_ids is not None:
                chosen = sorted(set(chosen) | set(active_ids))
            active_ids = chosen
            view = _domain_view(corpus, active_ids)
            policy = empirical_proportions(corpus, active_ids).weights
            selection_digest = 0 if set(active_ids) == all_ids else id_set_digest(active_ids)
            ref_checkpoint = snapshot(model, opt)
            result.selections.append(SelectionEvent(step=step, ids=tuple(active_ids), digest=selection_digest))
        else:
            losses = np.full(corpus.num_domains, np.nan)
            observed = window_count > 0
            losses[observed] = window_sum[observed] / window_count[observed]
            new_policy, feedback = mixer.update(MixtureWeights(policy), losses, rng_component)
            policy = new_policy.weights
            record = {"step": step, "weights": [float(x) for x in policy]}
            if feedback is not None:
                record["rewards"] = feedback
            result.weight_trajectory.append(record)
            needs_window_reset = True
        if state_digest(model, opt) != guard:
            raise RuntimeError("component invocation mutated model or optimizer state")

    last_loss = float("nan")
    warmup = cfg.schedule.warmup_step
    for step in range(1, cfg.max_steps + 1):
        if step in fire_steps:
            invoke_component(step)
            result.invocations.append(fire_steps[step])
            if needs_window_reset:
                window_sum[:] = 0.0
                window_count[:] = 0
                needs_window_reset = False

        batch, _ = sample_batch(MixtureWeights(policy), corpus, cfg.optim_cfg.batch_size, rng_sample, domain_ids=view)

        if mode == "weight":
            model, opt, last_loss, weights = weighter_apply(model, opt, batch, strategy, in_warmup=step <= warmup)
            norm = weights / weights.sum()
            positive = norm[norm > 0.0]
            result.weight_stats.append(
                {
                    "step": step,
                    "min_weight": float(weights.min()),
                    "max_weight": float(weights.max()),
                    "entropy": float(-np.sum(positive * np.log(positive))),
                }
            )
        else:
            if wants_domain_losses:
                for s, loss_i in zip(batch, batch_losses(model, batch)):
                    window_sum[s.domain_id] += loss_i
                    window_count[s.domain_id] += 1
            model, opt, last_loss = train_step(model, opt, batch, np.ones(len(batch)))

        if step % cfg.eval_interval == 0:
            ev = eval_per_domain(model, val)
            result.metrics.append(
                MetricsRecord(
                    step=step,
                    train_loss=last_loss,
                    per_domain_val_loss=ev.per_domain,
                    overall_val_loss=ev.overall,
                    mixture=tuple(float(x) for x in policy),
                    active_selection_digest=selection_digest,
                )
            )

    result.model = model
    result.opt = opt
    return result


def run_static(cfg: RunConfig, corpus: Corpus, val: Corpus, registry=None) -> RunResult:
    if cfg.train_type != "static":
        raise BadParams(f"run_static needs train_type='static', got {cfg.train_type!r}")
    return run_training(cfg, corpus, val, registry)


def run_select(cfg: RunConfig, corpus: Corpus, val: Corpus, registry=None) -> RunResult:
    if cfg.train_type != "dynamic_select":
        raise BadParams(f"run_select needs train_type='dynamic_select', got {cfg.train_type!r}")
    return run_training(cfg, corpus, val, registry)


def run_mix(cfg: RunConfig, corpus: Corpus, val: Corpus, registry=None) -> RunResult:
    if cfg.train_type != "dynamic_mix":
        raise BadParams(f"run_mix needs train_type='dynamic_mix', got {cfg.train_type!r}")
    return run_training(cfg, corpus, val, registry)


def run_weight(cfg: RunConfig, corpus: Corpus, val: Corpus, registry=None) -> RunResult:
    if cfg.train_type != "dynamic_weight":
        raise BadParams(f"run_weight needs train_type='dynamic_weight', got {cfg.train_type!r}")
    return run_training(cfg, corpus, val, registry)
