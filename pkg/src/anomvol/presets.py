"""Per-class background-removal settings shipped with the package."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources


@dataclass(frozen=True)
class BackgroundPreset:
    tau: float
    alpha: float


def load_presets() -> dict:
    """Class name -> ``BackgroundPreset``, or ``None`` for classes that skip plane removal."""
    raw = json.loads(resources.files("anomvol").joinpath("data/background_presets.json").read_text("utf-8"))
    return {k: (None if v is None else BackgroundPreset(float(v["tau"]), float(v["alpha"])))
            for k, v in raw["classes"].items()}


def background_preset(name: str):
    presets = load_presets()
    if name not in presets:
        raise KeyError(f"no background preset for {name!r}; known: {', '.join(sorted(presets))}")
    return presets[name]
