"""Bundled experiment parameter sets and loaders."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .model import NetworkConfig, parse_config

NAMED_EXPERIMENTS = (
    "fig3",
    "fig5",
    "fig7",
    "fig8",
    "poa-theorem1",
    "poa-char",
    "hiding-divergence",
)


def bundled_config_path(name: str) -> Path:
    ref = resources.files("routelab").joinpath("configs", f"{name}.json")
    with resources.as_file(ref) as path:
        return Path(path)


def load_bundled(name: str) -> dict:
    text = resources.files("routelab").joinpath("configs", f"{name}.json").read_text()
    return json.loads(text)


def fig3_config() -> NetworkConfig:
    return parse_config(load_bundled("fig3"))


def fig5_config() -> NetworkConfig:
    return parse_config(load_bundled("fig5"))


def hybrid_beijing_raw() -> dict:
    return load_bundled("hybrid_beijing")
