"""Sectioned key-value run configuration.

A run config is an INI-style text file with `#` comments and the
sections [base], [plugin], [decoding], [paths] and [run]; every key has
a default and unknown keys are rejected. All stage seeds derive from
the single [run] seed.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .base_ae import BaseConfig
from .generation import DecodingConfig
from .plugin_ae import PluginConfig

PATH_KEYS = (
    "corpus",
    "labeled",
    "vocab",
    "base_checkpoint",
    "plugin_checkpoint",
    "generated",
    "report",
    "latents",
)

# Section keys the user may set; stage seeds and derived sizes are not
# user-facing (vocab_size comes from the built vocabulary, num_classes
# from the labeled data unless pinned here).
_BASE_KEYS = {f.name: f.type for f in fields(BaseConfig) if f.name not in ("vocab_size", "seed")}
_PLUGIN_KEYS = {f.name: f.type for f in fields(PluginConfig) if f.name != "seed"}
_DECODING_KEYS = {f.name: f.type for f in fields(DecodingConfig) if f.name != "seed"}


@dataclass
class RunConfig:
    base: BaseConfig
    plugin: PluginConfig
    decoding: DecodingConfig
    paths: dict[str, str | None]
    seed: int = 0
    max_vocab: int = 10_000
    # False while num_classes is the placeholder awaiting derivation from data
    plugin_classes_pinned: bool = False


def default_run_config() -> RunConfig:
    cfg = RunConfig(
        base=BaseConfig(),
        plugin=PluginConfig(num_classes=2),
        decoding=DecodingConfig(),
        paths={key: None for key in PATH_KEYS},
    )
    return _derive_seeds(cfg)


def _derive_seeds(cfg: RunConfig) -> RunConfig:
    return replace(
        cfg,
        base=replace(cfg.base, seed=cfg.seed),
        plugin=replace(cfg.plugin, seed=cfg.seed + 1),
        decoding=replace(cfg.decoding, seed=cfg.seed + 2),
    )


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return _derive_seeds(replace(cfg, seed=seed))


def _convert(section: str, key: str, raw: str, type_name: str):
    raw = raw.strip()
    try:
        if key == "kernel_bandwidth":
            return None if raw.lower() in ("auto", "none") else float(raw)
        if key == "num_classes" and raw.lower() == "auto":
            return 0
        return {"int": int, "float": float, "str": str}[type_name](raw)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def parse_run_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    parser.read_string(p.read_text(encoding="utf-8"), source=str(p))

    known = {"base", "plugin", "decoding", "paths", "run"}
    unknown_sections = set(parser.sections()) - known
    if unknown_sections:
        raise ValueError(f"unknown config section(s): {sorted(unknown_sections)}")

    def section_kwargs(name: str, allowed: dict[str, str]) -> dict:
        if not parser.has_section(name):
            return {}
        out = {}
        for key, raw in parser.items(name):
            if key not in allowed:
                raise ValueError(f"unknown key {key!r} in section [{name}]")
            out[key] = _convert(name, key, raw, allowed[key])
        return out

    base_kwargs = section_kwargs("base", dict(_BASE_KEYS) | {"max_vocab": "int"})
    plugin_kwargs = section_kwargs("plugin", dict(_PLUGIN_KEYS))
    decoding_kwargs = section_kwargs("decoding", dict(_DECODING_KEYS))
    max_vocab = base_kwargs.pop("max_vocab", 10_000)

    paths: dict[str, str | None] = {key: None for key in PATH_KEYS}
    if parser.has_section("paths"):
        for key, raw in parser.items("paths"):
            if key not in PATH_KEYS:
                raise ValueError(f"unknown key {key!r} in section [paths]")
            paths[key] = raw.strip()

    seed = 0
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key != "seed":
                raise ValueError(f"unknown key {key!r} in section [run]")
            seed = _convert("run", "seed", raw, "int")

    num_classes = plugin_kwargs.pop("num_classes", 0)
    plugin = PluginConfig(num_classes=max(2, num_classes), **plugin_kwargs)
    cfg = RunConfig(
        base=BaseConfig(**base_kwargs),
        plugin=plugin,
        decoding=DecodingConfig(**decoding_kwargs),
        paths=paths,
        seed=seed,
        max_vocab=max_vocab,
        plugin_classes_pinned=num_classes > 0,
    )
    return _derive_seeds(cfg)


def decoding_to_metadata(cfg: DecodingConfig) -> dict[str, str]:
    meta = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        meta[f"decoding.{f.name}"] = repr(float(value)) if f.type == "float" else str(value)
    return meta


def decoding_from_metadata(meta: dict[str, str]) -> DecodingConfig:
    kwargs = {}
    for f in fields(DecodingConfig):
        raw = meta[f"decoding.{f.name}"]
        kwargs[f.name] = {"int": int, "float": float, "str": str}[f.type](raw)
    return DecodingConfig(**kwargs)
