"""Config files: a small YAML-subset parser and RunConfig (de)serialization.

Supported syntax: nested maps via indentation, flow lists of scalars
(``[1, 2.5, x]``), block sequences of scalars or flow lists (``- item``),
comments, and quoted or bare scalars. Tabs in indentation are rejected.
The restriction keeps the key contract bit-exact and the error messages
line-accurate; nothing in this package needs more.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Optional

from .core import (
    MixtureWeights,
    ModelCfg,
    OptimCfg,
    RunConfig,
    Schedule,
)
from .errors import ParseError, UnknownKey, UnknownTrainType

_BARE_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")

DATAFLEX_KEYS = (
    "train_type",
    "component_name",
    "warmup_step",
    "update_step",
    "update_times",
    "init_mixture_proportions",
    "component_params",
)
MODEL_KEYS = ("vocab_size", "embed_dim", "hidden_dim", "task")
TRAIN_KEYS = (
    "optimizer",
    "learning_rate",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "seed",
    "max_steps",
    "eval_interval",
    "out_dir",
)
TOP_LEVEL_SECTIONS = ("model", "data", "train", "dataflex", "mix_sim")


def _parse_scalar(text: str, line: int):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "yes"):
        return True
    if lowered in ("false", "no"):
        return False
    if lowered in ("null", "none", "~", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if _BARE_KEY.match(text) or " " in text or "/" in text or "." in text:
        return text
    raise ParseError(f"cannot parse scalar {text!r}", line)


def _parse_flow_list(text: str, line: int) -> list:
    body = text.strip()[1:-1].strip()
    if not body:
        return []
    return [_parse_scalar(part, line) for part in body.split(",")]


def _strip_comment(line: str) -> str:
    out = []
    quote = None
    for ch in line:
        if quote:
            out.append(ch)
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
            out.append(ch)
        elif ch == "#":
            break
        else:
            out.append(ch)
    return "".join(out).rstrip()


def parse_text(text: str) -> dict:
    """Parse a config document into nested dicts / lists / scalars."""
    lines = []
    for idx, raw in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(raw)
        if not stripped.strip():
            continue
        indent_part = stripped[: len(stripped) - len(stripped.lstrip())]
        if "\t" in indent_part:
            raise ParseError("tabs are not allowed in indentation", idx)
        lines.append((len(indent_part), stripped.strip(), idx))

    pos = 0

    def parse_block(indent: int):
        nonlocal pos
        if pos < len(lines) and lines[pos][1].startswith("- "):
            return parse_sequence(indent)
        return parse_mapping(indent)

    def parse_sequence(indent: int) -> list:
        nonlocal pos
        items = []
        while pos < len(lines) and lines[pos][0] == indent and lines[pos][1].startswith("- "):
            _, content, lineno = lines[pos]
            pos += 1
            body = content[2:].strip()
            if body.startswith("[") and body.endswith("]"):
                items.append(_parse_flow_list(body, lineno))
            else:
                items.append(_parse_scalar(body, lineno))
        return items

    def parse_mapping(indent: int) -> dict:
        nonlocal pos
        out: dict = {}
        while pos < len(lines):
            line_indent, content, lineno = lines[pos]
            if line_indent < indent:
                break
            if line_indent > indent:
                raise ParseError(f"unexpected indentation of {line_indent}", lineno)
            if content.startswith("- "):
                raise ParseError("sequence item where a mapping key was expected", lineno)
            if ":" not in content:
                raise ParseError(f"expected 'key: value', got {content!r}", lineno)
            key, _, rest = content.partition(":")
            key = key.strip()
            if not _BARE_KEY.match(key):
                raise ParseError(f"invalid key {key!r}", lineno)
            if key in out:
                raise ParseError(f"duplicate key {key!r}", lineno)
            rest = rest.strip()
            pos += 1
            if rest == "":
                if pos < len(lines) and lines[pos][0] > indent:
                    out[key] = parse_block(lines[pos][0])
                else:
                    out[key] = None
            elif rest.startswith("[") and rest.endswith("]"):
                out[key] = _parse_flow_list(rest, lineno)
            else:
                out[key] = _parse_scalar(rest, lineno)
        return out

    tree = parse_mapping(0) if lines else {}
    if pos != len(lines):
        raise ParseError("could not consume the whole document", lines[pos][2])
    return tree


def load_config_tree(path) -> dict:
    text = Path(path).read_text()
    tree = parse_text(text)
    for section in tree:
        if section not in TOP_LEVEL_SECTIONS:
            raise UnknownKey(f"unknown top-level section {section!r}; expected one of {TOP_LEVEL_SECTIONS}")
    return tree


def _require_map(value, name: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ParseError(f"section {name!r} must be a mapping")
    return value


def _check_keys(section: dict, allowed, name: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise UnknownKey(f"unknown {name} key(s): {unknown}; allowed: {sorted(allowed)}")


def config_from_tree(tree: dict) -> RunConfig:
    model_section = _require_map(tree.get("model"), "model")
    _check_keys(model_section, MODEL_KEYS, "model")
    model_cfg = ModelCfg(
        vocab_size=int(model_section.get("vocab_size", 64)),
        embed_dim=int(model_section.get("embed_dim", 16)),
        hidden_dim=int(model_section.get("hidden_dim", 32)),
        task=str(model_section.get("task", "lm")),
    )

    train_section = _require_map(tree.get("train"), "train")
    _check_keys(train_section, TRAIN_KEYS, "train")
    optim_cfg = OptimCfg(
        kind=str(train_section.get("optimizer", "adam")),
        learning_rate=float(train_section.get("learning_rate", 1e-3)),
        beta1=float(train_section.get("beta1", 0.9)),
        beta2=float(train_section.get("beta2", 0.999)),
        eps=float(train_section.get("eps", 1e-8)),
        batch_size=int(train_section.get("batch_size", 8)),
    )

    flex = _require_map(tree.get("dataflex"), "dataflex")
    _check_keys(flex, DATAFLEX_KEYS, "dataflex")
    train_type = str(flex.get("train_type", "static"))
    if train_type not in ("static", "dynamic_select", "dynamic_mix", "dynamic_weight"):
        raise UnknownTrainType(f"train_type {train_type!r}")
    schedule = Schedule(
        warmup_step=int(flex.get("warmup_step", 0)),
        update_step=int(flex.get("update_step", 1)),
        update_times=int(flex.get("update_times", 0)),
    )
    proportions = flex.get("init_mixture_proportions")
    init_mixture = None if proportions is None else MixtureWeights.from_config(proportions)
    raw_params = flex.get("component_params") or {}
    if not isinstance(raw_params, dict):
        raise ParseError("component_params must be a mapping of scalars")

    return RunConfig(
        train_type=train_type,
        component_name=str(flex.get("component_name", "") or ""),
        schedule=schedule,
        init_mixture_proportions=init_mixture,
        model_cfg=model_cfg,
        optim_cfg=optim_cfg,
        component_params=raw_params,
        seed=int(train_section.get("seed", 0)),
        max_steps=int(train_section.get("max_steps", 1000)),
        eval_interval=int(train_section.get("eval_interval", 200)),
    )


def parse_config(path) -> RunConfig:
    """Parse a config file into a RunConfig (corpus cross-checks happen at run time)."""
    return config_from_tree(load_config_tree(path))


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if value is None:
        return "null"
    text = str(value)
    return text if _BARE_KEY.match(text) else f'"{text}"'


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig back into config text; parse(serialize(x)) == x."""
    lines = ["model:"]
    lines.append(f"  vocab_size: {cfg.model_cfg.vocab_size}")
    lines.append(f"  embed_dim: {cfg.model_cfg.embed_dim}")
    lines.append(f"  hidden_dim: {cfg.model_cfg.hidden_dim}")
    lines.append(f"  task: {cfg.model_cfg.task}")
    lines.append("train:")
    lines.append(f"  optimizer: {cfg.optim_cfg.kind}")
    lines.append(f"  learning_rate: {_format_scalar(cfg.optim_cfg.learning_rate)}")
    lines.append(f"  beta1: {_format_scalar(cfg.optim_cfg.beta1)}")
    lines.append(f"  beta2: {_format_scalar(cfg.optim_cfg.beta2)}")
    lines.append(f"  eps: {_format_scalar(cfg.optim_cfg.eps)}")
    lines.append(f"  batch_size: {cfg.optim_cfg.batch_size}")
    lines.append(f"  seed: {cfg.seed}")
    lines.append(f"  max_steps: {cfg.max_steps}")
    lines.append(f"  eval_interval: {cfg.eval_interval}")
    lines.append("dataflex:")
    lines.append(f"  train_type: {cfg.train_type}")
    if cfg.component_name:
        lines.append(f"  component_name: {cfg.component_name}")
    lines.append(f"  warmup_step: {cfg.schedule.warmup_step}")
    lines.append(f"  update_step: {cfg.schedule.update_step}")
    lines.append(f"  update_times: {cfg.schedule.update_times}")
    if cfg.init_mixture_proportions is not None:
        body = ", ".join(repr(float(x)) for x in cfg.init_mixture_proportions.weights)
        lines.append(f"  init_mixture_proportions: [{body}]")
    if cfg.component_params:
        lines.append("  component_params:")
        for key in sorted(cfg.component_params):
            lines.append(f"    {key}: {_format_scalar(cfg.component_params[key])}")
    return "\n".join(lines) + "\n"
