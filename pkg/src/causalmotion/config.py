"""Run configuration: JSON documents with full defaults, strict key
validation, and a stable hash tying checkpoints to the settings that
produced them."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

from .align import AlignConfig
from .data import DatasetSpec
from .dit import DiTConfig
from .errors import ConfigError
from .training import TrainSettings
from .vae import VaeConfig

CONFIG_DIR_ENV = "CAUSALMOTION_CONFIG_DIR"

DEFAULTS: dict = {
    "seed": 0,
    "data": {
        "samples_per_caption": 64,
        "frames": 64,
        "fps": 20.0,
        "noise_std": 0.02,
    },
    "vae": {
        "latent_dim": 16,
        "channels": 64,
        "beta": 1.0,
        "align": {
            "feature_dim": 16,
            "m1": 0.5,
            "m2": 0.25,
            "lambda_max": 10.0,
            "eps": 1e-8,
            "mdms_on_projected": False,
        },
    },
    "dit": {
        "layers": 4,
        "heads": 4,
        "hidden": 128,
        "mlp_ratio": 4,
        "vocab_size": 16,
        "rope_base": 10000.0,
    },
    "diffusion": {
        "steps_train": 1000,
        "kind": "linear",
    },
    "sampler": {
        "steps_infer": 50,
        "uncertainty_scale": 2,
        "guidance_scale": 3.0,
    },
    "train": {
        "vae": {
            "steps": 1200,
            "batch_size": 32,
            "lr": 1e-3,
            "weight_decay": 0.01,
            "clip_norm": 1.0,
            "dtype": "float64",
            "log_every": 100,
        },
        "dit": {
            "steps": 2400,
            "batch_size": 32,
            "lr": 1e-3,
            "weight_decay": 0.01,
            "clip_norm": 1.0,
            "dtype": "float64",
            "drop_prob": 0.1,
            "log_every": 200,
        },
    },
    "eval": {
        "samples_per_caption": 8,
        "modes": ["ar", "fss"],
        "seed": 100,
    },
}


def _merge(defaults: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be a section")
            out[key] = _merge(defaults[key], value, prefix=f"{dotted}.")
        else:
            if isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} is not a section")
            out[key] = value
    return out


def resolve_config(user: dict | None = None) -> dict:
    """Defaults overlaid with user settings; unknown keys rejected."""
    return _merge(DEFAULTS, user or {})


def load_config(path: str | Path | None) -> dict:
    """Load and resolve a config file. A bare name (no existing path) is
    looked up inside $CAUSALMOTION_CONFIG_DIR. None resolves pure defaults."""
    if path is None:
        return resolve_config()
    p = Path(path)
    if not p.exists():
        env_dir = os.environ.get(CONFIG_DIR_ENV)
        if env_dir and (Path(env_dir) / p).exists():
            p = Path(env_dir) / p
        else:
            raise ConfigError(f"config file not found: {path}")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(user, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return resolve_config(user)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply `a.b.c=json_value` strings on top of a resolved config."""
    patch: dict = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        dotted, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings allowed
        node = patch
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return _merge(cfg, patch)


def config_hash(cfg: dict, sections: tuple[str, ...]) -> int:
    """Stable signed-64-bit hash over the listed sections plus the seed."""
    subset = {"seed": cfg["seed"], **{s: cfg[s] for s in sections}}
    digest = hashlib.sha256(json.dumps(subset, sort_keys=True).encode()).digest()
    return int.from_bytes(digest[:8], "little", signed=True)


def save_resolved(cfg: dict, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


# -- builders -----------------------------------------------------------------


def dataset_spec(cfg: dict) -> DatasetSpec:
    d = cfg["data"]
    return DatasetSpec(
        samples_per_caption=d["samples_per_caption"],
        frames=d["frames"],
        fps=d["fps"],
        noise_std=d["noise_std"],
        seed=cfg["seed"],
    )


def vae_config(cfg: dict) -> VaeConfig:
    v = cfg["vae"]
    return VaeConfig(latent_dim=v["latent_dim"], channels=v["channels"], beta=v["beta"])


def align_config(cfg: dict) -> AlignConfig:
    a = cfg["vae"]["align"]
    return AlignConfig(
        feature_dim=a["feature_dim"],
        m1=a["m1"],
        m2=a["m2"],
        lambda_max=a["lambda_max"],
        eps=a["eps"],
        mdms_on_projected=a["mdms_on_projected"],
    )


def dit_config(cfg: dict) -> DiTConfig:
    d = cfg["dit"]
    return DiTConfig(
        layers=d["layers"],
        heads=d["heads"],
        hidden=d["hidden"],
        latent_dim=cfg["vae"]["latent_dim"],
        vocab_size=d["vocab_size"],
        mlp_ratio=d["mlp_ratio"],
        rope_base=d["rope_base"],
        max_level=cfg["diffusion"]["steps_train"],
    )


def train_settings(cfg: dict, which: str) -> TrainSettings:
    t = cfg["train"][which]
    return TrainSettings(
        steps=t["steps"],
        batch_size=t["batch_size"],
        lr=t["lr"],
        weight_decay=t["weight_decay"],
        clip_norm=t["clip_norm"],
        dtype=t["dtype"],
        drop_prob=t.get("drop_prob", 0.0),
        log_every=t["log_every"],
    )
