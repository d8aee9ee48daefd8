"""Flat key=value config file with typed schema, overrides, and env paths.

Precedence: file < ``TAILFORGE_<KEY>`` environment variables (path keys
only) < ``--override key=value`` flags.  Unknown keys and unparsable values
are config errors that name the offending key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(Exception):
    """Bad config file, unknown key, or unparsable value."""


class DependencyError(Exception):
    """An upstream artifact is missing; names the command that produces it."""


@dataclass
class PipelineConfig:
    # paths; empty string means "default location under out_dir"
    out_dir: str = "runs/out"
    taxonomy_path: str = ""
    dataset_path: str = ""
    test_dataset_path: str = ""
    object_vocab_path: str = ""
    relation_vocab_path: str = ""
    region_store_path: str = ""
    box_store_path: str = ""
    text_store_path: str = ""
    test_region_store_path: str = ""
    world_path: str = ""
    aug_text_store_path: str = ""
    eval_model_path: str = ""

    # synthetic benchmark
    synth_obj_classes: int = 60
    synth_rel_classes: int = 20
    synth_dim_visual: int = 48
    synth_dim_text: int = 24
    synth_zipf: float = 1.5
    synth_triplets: int = 6000
    synth_eval_samples: int = 600
    synth_seed: int = 0
    synth_noise_sigma: float = 0.1
    synth_text_sigma: float = 0.02
    synth_boxes_per_class: int = 5
    synth_group_size: int = 4

    # stage 1: triplet augmentation
    lch_threshold: float = 2.26
    budget_few: int = 48000
    budget_medium: int = 48000
    augment_seed: int = 0

    # hardness clustering
    kmeans_k: int = 1200
    kmeans_seed: int = 0
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    kmeans_n_init: int = 10

    # diffusion model
    diffusion_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    diffusion_hidden: int = 128
    diffusion_depth: int = 2
    diffusion_attn_width: int = 64
    diffusion_time_width: int = 32
    diffusion_train_steps: int = 5000
    diffusion_batch: int = 256
    diffusion_lr: float = 1e-4
    diffusion_train_seed: int = 0

    # sampling
    sample_seed: int = 0
    samples_per_triplet: int = 1
    sample_batch: int = 256

    # feature flags
    hardness_condition: bool = False
    so_seed: bool = False
    curriculum: bool = False

    # baseline classifier
    baseline_loss: str = "ce"
    baseline_hidden: int = 64
    baseline_steps: int = 2000
    baseline_batch: int = 256
    baseline_lr: float = 1e-3
    baseline_seed: int = 0

    # fine-tuning
    finetune_epochs: int = 10
    finetune_batch: int = 256
    finetune_lr: float = 1e-4
    finetune_seed: int = 0
    finetune_mix_ratio: float = 0.0

    # reporting
    report_inputs: str = ""

    # -- resolved artifact locations ---------------------------------------

    def out(self) -> Path:
        return Path(self.out_dir)

    def artifact(self, key: str, default_name: str) -> Path:
        configured = getattr(self, key)
        if configured:
            return Path(configured)
        return self.out() / default_name

    def snapshot(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str) -> Any:
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(
    path: str | Path | None,
    overrides: list[str] | None = None,
    env: dict[str, str] | None = None,
) -> PipelineConfig:
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), source=str(p)))
    env = dict(os.environ if env is None else env)
    for key in _FIELD_TYPES:
        if not (key.endswith("_path") or key.endswith("_dir")):
            continue
        env_key = "TAILFORGE_" + key.upper()
        if env_key in env:
            values[key] = env[env_key]
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key in override: {key!r}")
        values[key] = _coerce(key, raw)
    return PipelineConfig(**values)


def write_config(config: PipelineConfig, path: str | Path) -> None:
    lines = [f"{key} = {value}" for key, value in config.snapshot().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
