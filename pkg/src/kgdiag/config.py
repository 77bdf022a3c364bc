"""Experiment configuration: one flat key-value namespace covering every
stage, loadable from a config file with command-line overrides on top.

File format: one ``key = value`` per line, ``#`` comments, keys namespaced
with dots (``kge.dim``, ``sampler.num_samples``).  Sub-stage seeds default to
the global ``seed`` unless set explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .kge import KgeConfig
from .mapper import MapperConfig
from .quality import QualityConfig
from .sampling import SamplerConfig


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    format: str = "tsv-triples"
    out_dir: str = "out"
    seed: int = 0
    workers: int = 1
    test_fraction: float = 0.1
    sobol_n: int = 4096
    open_fraction: float = 0.1
    text_dim: int = 0  # 0 means: match the graph embedding dim
    noise_sigma: float = 0.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    kge: KgeConfig = field(default_factory=KgeConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    mapper: MapperConfig = field(default_factory=MapperConfig)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_optional_float(raw: str) -> float | None:
    return None if raw.lower() in ("none", "") else float(raw)


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    return tuple(int(v) for v in raw.split(",") if v.strip()) if raw else ()


_CONVERTERS = {
    "dataset": str,
    "format": str,
    "out_dir": str,
    "seed": int,
    "workers": int,
    "test_fraction": float,
    "sobol_n": int,
    "open_fraction": float,
    "text_dim": int,
    "noise_sigma": float,
    "sampler.ratio_min": float,
    "sampler.ratio_max": float,
    "sampler.top_k_start": int,
    "sampler.seed": int,
    "sampler.num_samples": int,
    "kge.scorer": str,
    "kge.dim": int,
    "kge.epochs": int,
    "kge.learning_rate": float,
    "kge.margin": float,
    "kge.negatives_per_positive": int,
    "kge.batch_size": int,
    "kge.seed": int,
    "quality.alpha": float,
    "quality.k_neighbors": int,
    "quality.distance": str,
    "quality.sample_size": int,
    "quality.epsilon_low": _parse_optional_float,
    "quality.epsilon_high": _parse_optional_float,
    "quality.seed": int,
    "mapper.hidden_dims": _parse_int_tuple,
    "mapper.activation": str,
    "mapper.loss": str,
    "mapper.epochs": int,
    "mapper.learning_rate": float,
    "mapper.batch_size": int,
    "mapper.seed": int,
    "mapper.epsilon_low": _parse_optional_float,
    "mapper.epsilon_high": _parse_optional_float,
    "mapper.val_fraction": float,
}

_SUB_PREFIXES = ("sampler", "kge", "quality", "mapper")


def to_flat(cfg: ExperimentConfig) -> dict[str, str]:
    flat: dict[str, str] = {}
    for key in _CONVERTERS:
        if "." in key:
            prefix, name = key.split(".", 1)
            flat[key] = _fmt(getattr(getattr(cfg, prefix), name))
        else:
            flat[key] = _fmt(getattr(cfg, key))
    return flat


def from_flat(flat: dict[str, str]) -> ExperimentConfig:
    unknown = set(flat) - set(_CONVERTERS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    values = {key: _CONVERTERS[key](raw) for key, raw in flat.items()}
    top = {k: v for k, v in values.items() if "." not in k}
    cfg = ExperimentConfig(**top)
    seed = cfg.seed
    for prefix in _SUB_PREFIXES:
        sub_values = {
            key.split(".", 1)[1]: v
            for key, v in values.items()
            if key.startswith(prefix + ".")
        }
        if "seed" not in sub_values:
            sub_values["seed"] = seed
        cfg = replace(cfg, **{prefix: replace(getattr(cfg, prefix), **sub_values)})
    return cfg


def parse_config_file(path: str) -> dict[str, str]:
    flat: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            flat[key.strip()] = raw.strip()
    return flat


def write_config_file(flat: dict[str, str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(flat):
            fh.write(f"{key} = {flat[key]}\n")


def build_config(
    config_path: str | None = None, overrides: dict[str, str] | None = None
) -> ExperimentConfig:
    """File values first, command-line overrides on top."""
    flat = parse_config_file(config_path) if config_path else {}
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    return from_flat(flat)
