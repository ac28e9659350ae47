"""Command-line entry point: ``dataflex-cli <subcommand> ...``.

Subcommands: ``train`` (run a configured training mode and write metrics,
checkpoint, and any trajectory files), ``gen-data`` (emit a synthetic corpus
file), ``score`` (one-shot selector scoring dump after warmup training), and
``mix-sim`` (drive a mixer from recorded loss vectors with no model).

Every package error maps to a distinct exit code; the table is printed as
part of ``--help``. Failures emit a single diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import config_from_tree, load_config_tree
from .core import MixtureWeights, RunConfig, empirical_proportions, validate_config
from .data import build_domain_specs, generate_corpus, make_validation
from .errors import IO_ERROR_EXIT_CODE, BadMode, DataflexError, ParseError, exit_code_table
from .fileio import (
    read_corpus,
    save_checkpoint,
    write_corpus,
    write_jsonl,
    write_metrics,
    write_scores,
)
from .mixers import DoremiParams, OdmParams, doremi_update, odm_init, odm_update
from .model import init_model, init_optimizer, snapshot, train_step
from .mixers import sample_batch
from .trainers import DEFAULT_REGISTRY, SelectionContext, _EmbeddingCache, run_training
from .selectors import select

_DATA_KEYS = {"corpus", "validation", "synthetic"}
_SYNTH_KEYS = {
    "num_samples",
    "num_domains",
    "seed",
    "proportions",
    "noise_domains",
    "mean_length",
    "val_size",
    "val_mode",
    "val_domain",
    "val_weights",
    "val_seed",
}


def _build_data(tree: dict, cfg: RunConfig):
    """Load or generate (corpus, validation) from the config's data section."""
    section = tree.get("data") or {}
    unknown = set(section) - _DATA_KEYS
    if unknown:
        raise ParseError(f"unknown data key(s): {sorted(unknown)}")
    if "corpus" in section:
        corpus = read_corpus(section["corpus"], vocab_size=cfg.model_cfg.vocab_size)
        if "validation" not in section:
            raise ParseError("data.corpus requires data.validation")
        val = read_corpus(section["validation"], domain_names=corpus.domain_names, vocab_size=cfg.model_cfg.vocab_size)
        return corpus, val
    synth = section.get("synthetic")
    if synth is None:
        raise ParseError("data section needs either 'corpus'/'validation' paths or a 'synthetic' block")
    unknown = set(synth) - _SYNTH_KEYS
    if unknown:
        raise ParseError(f"unknown data.synthetic key(s): {sorted(unknown)}")

    k = int(synth.get("num_domains", 3))
    n = int(synth.get("num_samples", 1000))
    seed = int(synth.get("seed", cfg.seed))
    specs = build_domain_specs(
        k,
        cfg.model_cfg.vocab_size,
        seed=seed,
        noise_domains=tuple(int(d) for d in (synth.get("noise_domains") or ())),
        mean_length=int(synth.get("mean_length", 12)),
    )
    proportions = synth.get("proportions")
    mixture = MixtureWeights.from_config(proportions) if proportions is not None else MixtureWeights.uniform(k)
    corpus = generate_corpus(specs, mixture, n, seed)

    mode = str(synth.get("val_mode", "in_distribution"))
    val_kwargs = {}
    if mode == "in_distribution":
        val_kwargs["proportions"] = empirical_proportions(corpus)
    elif mode == "single_domain":
        if "val_domain" not in synth:
            raise BadMode("val_mode single_domain needs val_domain")
        val_kwargs["domain"] = int(synth["val_domain"])
    elif mode == "skewed":
        if "val_weights" not in synth:
            raise BadMode("val_mode skewed needs val_weights")
        val_kwargs["weights"] = synth["val_weights"]
    val = make_validation(
        specs,
        mode,
        int(synth.get("val_size", max(50, n // 10))),
        int(synth.get("val_seed", seed + 1)),
        **val_kwargs,
    )
    return corpus, val


def _load_run_inputs(config_path, args):
    tree = load_config_tree(config_path)
    cfg = config_from_tree(tree)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "max_steps", None) is not None:
        overrides["max_steps"] = args.max_steps
    if getattr(args, "eval_interval", None) is not None:
        overrides["eval_interval"] = args.eval_interval
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return tree, cfg


def _out_dir(tree: dict, args, config_path) -> Path:
    if getattr(args, "out_dir", None):
        out = Path(args.out_dir)
    else:
        configured = (tree.get("train") or {}).get("out_dir")
        out = Path(configured) if configured else Path("runs") / Path(config_path).stem
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_train(args) -> int:
    tree, cfg = _load_run_inputs(args.config, args)
    corpus, val = _build_data(tree, cfg)
    validate_config(cfg, corpus)
    out = _out_dir(tree, args, args.config)

    result = run_training(cfg, corpus, val)

    write_metrics(out / "metrics.jsonl", result.metrics)
    save_checkpoint(out / "checkpoint.json", snapshot(result.model, result.opt))
    if result.weight_trajectory is not None:
        write_jsonl(out / "trajectory.jsonl", result.weight_trajectory)
    if result.weight_stats is not None:
        write_jsonl(out / "weight_stats.jsonl", result.weight_stats)
    if result.selections:
        write_jsonl(
            out / "selections.jsonl",
            [{"step": ev.step, "size": len(ev.ids), "digest": ev.digest} for ev in result.selections],
        )
    final = result.metrics[-1].overall_val_loss if result.metrics else float("nan")
    print(f"train: {cfg.train_type} steps={cfg.max_steps} final_val_loss={final:.6f} out={out}")
    return 0


def _cmd_gen_data(args) -> int:
    tree, cfg = _load_run_inputs(args.config, args)
    corpus, _ = _build_data(tree, cfg)
    write_corpus(args.out, corpus)
    print(f"gen-data: wrote {len(corpus)} samples across {corpus.num_domains} domains to {args.out}")
    return 0


def _cmd_score(args) -> int:
    tree, cfg = _load_run_inputs(args.config, args)
    corpus, val = _build_data(tree, cfg)
    validate_config(cfg, corpus)
    if not cfg.component_name:
        raise ParseError("score needs dataflex.component_name")

    kids = np.random.SeedSequence(cfg.seed).spawn(4)
    model = init_model(cfg.model_cfg, np.random.default_rng(kids[0]))
    opt = init_optimizer(cfg.optim_cfg, model.params.size)
    rng_sample = np.random.default_rng(kids[1])
    policy = cfg.init_mixture_proportions or empirical_proportions(corpus)
    for _ in range(cfg.schedule.warmup_step):
        batch, _ = sample_batch(policy, corpus, cfg.optim_cfg.batch_size, rng_sample)
        model, opt, _ = train_step(model, opt, batch, np.ones(len(batch)))

    params = dict(cfg.component_params)
    params.pop("ratio", None)
    params.pop("accumulate", None)
    selector = DEFAULT_REGISTRY.resolve("selector", cfg.component_name, params)
    cache = _EmbeddingCache(list(corpus.samples), list(val.samples))
    ctx = SelectionContext(
        model=model,
        opt=opt,
        pool=list(corpus.samples),
        val=list(val.samples),
        rng=np.random.default_rng(kids[2]),
        ref_checkpoint=snapshot(model, opt),
        embeddings=cache.provider(model),
    )
    scores = selector.score(ctx)
    write_scores(args.out, scores)
    print(f"score: {scores.method} over {len(scores)} samples -> {args.out}")
    return 0


def _cmd_mix_sim(args) -> int:
    tree, cfg = _load_run_inputs(args.config, args)
    sim = tree.get("mix_sim") or {}
    name = cfg.component_name
    trajectory = []
    if name == "doremi":
        if "lambdas" in sim:
            lambdas = [np.asarray(v, dtype=np.float64) for v in sim["lambdas"]]
        elif "proxy_losses" in sim and "ref_losses" in sim:
            from .mixers import excess_loss

            lambdas = [
                excess_loss(np.asarray(p, dtype=np.float64), np.asarray(r, dtype=np.float64))
                for p, r in zip(sim["proxy_losses"], sim["ref_losses"])
            ]
        else:
            raise ParseError("mix_sim for doremi needs 'lambdas' or 'proxy_losses'+'ref_losses'")
        if not lambdas:
            raise ParseError("mix_sim has no updates")
        k = lambdas[0].size
        params = DoremiParams(
            eta=float(cfg.component_params.get("eta", 0.1)),
            epsilon=float(cfg.component_params.get("epsilon", 0.01)),
            K=k,
        )
        alpha = cfg.init_mixture_proportions or MixtureWeights.uniform(k)
        for i, lam in enumerate(lambdas):
            alpha = doremi_update(alpha, lam, params)
            trajectory.append({"update": i, "weights": [float(x) for x in alpha.weights], "excess_losses": [float(x) for x in lam]})
    elif name == "odm":
        losses_seq = sim.get("losses")
        if not losses_seq:
            raise ParseError("mix_sim for odm needs a 'losses' sequence")
        vectors = [np.array([np.nan if x is None else float(x) for x in row]) for row in losses_seq]
        k = vectors[0].size
        params = OdmParams(
            ema_decay=float(cfg.component_params.get("ema_decay", 0.90)),
            reward_scale=float(cfg.component_params.get("reward_scale", 15.0)),
            eps_min=float(cfg.component_params.get("eps_min", 0.01)),
            clip_threshold=float(cfg.component_params.get("clip_threshold", -10.0)),
        )
        state = odm_init(cfg.init_mixture_proportions or MixtureWeights.uniform(k), params)
        for i, losses in enumerate(vectors):
            state = odm_update(state, losses, params)
            trajectory.append({"update": i, "weights": [float(x) for x in state.policy.weights]})
    else:
        raise ParseError(f"mix-sim supports component_name doremi or odm, got {name!r}")
    write_jsonl(args.out, trajectory)
    print(f"mix-sim: {name} ran {len(trajectory)} updates -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dataflex-cli",
        description="Dynamic data selection, mixing, and reweighting runs.",
        epilog=exit_code_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--max-steps", type=int, default=None, help="override train.max_steps")
        p.add_argument("--eval-interval", type=int, default=None, help="override train.eval_interval")

    p_train = sub.add_parser("train", help="run the configured training mode")
    p_train.add_argument("config")
    add_common(p_train)
    p_train.add_argument("--out-dir", default=None, help="output directory (default runs/<config stem>)")
    p_train.set_defaults(func=_cmd_train)

    p_gen = sub.add_parser("gen-data", help="generate a synthetic corpus file")
    p_gen.add_argument("config")
    p_gen.add_argument("out")
    add_common(p_gen)
    p_gen.set_defaults(func=_cmd_gen_data)

    p_score = sub.add_parser("score", help="one-shot selector scoring dump")
    p_score.add_argument("config")
    p_score.add_argument("out")
    add_common(p_score)
    p_score.set_defaults(func=_cmd_score)

    p_sim = sub.add_parser("mix-sim", help="mixer updates from recorded loss vectors (no model)")
    p_sim.add_argument("config")
    p_sim.add_argument("out")
    add_common(p_sim)
    p_sim.set_defaults(func=_cmd_mix_sim)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DataflexError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return IO_ERROR_EXIT_CODE


if __name__ == "__main__":
    sys.exit(main())
