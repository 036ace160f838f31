"""Dual (text + image) classifier-free guidance and per-task inference defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from ..errors import ParameterError


@dataclass(frozen=True)
class GuidanceConfig:
    gs: float = 2.5
    igs: float | None = None
    steps: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.gs < 0 or (self.igs is not None and self.igs < 0):
            raise ParameterError("guidance scales must be non-negative")


def load_guidance_table(path=None) -> dict:
    """Per-task defaults; the packaged table unless ``path`` points elsewhere."""
    if path is None:
        text = resources.files("omniforge.data").joinpath("guidance.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def task_guidance(task: str, table: dict | None = None) -> GuidanceConfig:
    table = table or load_guidance_table()
    try:
        entry = table["tasks"][task]
    except KeyError:
        raise ParameterError(f"no guidance defaults for task {task!r}; known: {sorted(table['tasks'])}") from None
    return GuidanceConfig(gs=entry["gs"], igs=entry.get("igs"), steps=int(table.get("steps", 50)))


def cfg_combine(v_uncond, v_img, v_full, gs: float, igs: float | None):
    """v_uncond + igs * (v_img - v_uncond) + gs * (v_full - v_img).

    Without an image condition pass ``v_img=None``: v_uncond + gs * (v_full - v_uncond).
    Evaluated as offsets from ``v_full`` so unit scales return it bit-exactly.
    """
    if v_img is None or igs is None:
        return v_full + (gs - 1.0) * (v_full - v_uncond)
    return v_full + (gs - 1.0) * (v_full - v_img) + (igs - 1.0) * (v_img - v_uncond)
