"""Data records for the editing-pair pipeline and its JSON config / JSONL manifest."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..errors import ContractError, ParameterError
from ..geometry import DEFAULT_FOV_DEG, DEFAULT_VIEW_RES, ViewportLayout, cube_layout
from ..masks import MaskParams
from .templates import TASK_TEMPLATES, parse_instruction

TASKS = tuple(TASK_TEMPLATES)
DEFAULT_BLOCKLIST = ("floor", "cityscape", "bedroom")
CONFIG_ENV = "OMNIFORGE_CONFIG"


def mask_hash(mask) -> str:
    """sha256 over the mask shape and its packed bits."""
    m = np.asarray(mask, dtype=bool)
    h = hashlib.sha256()
    h.update(np.asarray(m.shape, dtype="<u4").tobytes())
    h.update(np.packbits(m, axis=None).tobytes())
    return h.hexdigest()


@dataclass
class InstanceAnnotation:
    class_label: str
    mask: np.ndarray
    viewport_name: str
    confidence: float = 1.0
    # relative-position reference instance, when one was described
    reference: str | None = None

    def __post_init__(self):
        if not self.class_label:
            raise ContractError("class_label must be non-empty")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ContractError(f"instance mask must be 2-D, got {self.mask.shape}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class EditRecord:
    task: str
    input_path: str
    output_path: str
    instruction: str
    # (viewport_name, class_label, mask_hash) per edited instance
    provenance: tuple[tuple[str, str, str], ...]
    seed: int
    review: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        if self.input_path == self.output_path:
            raise ContractError("input and output paths must differ")
        parse_instruction(self.instruction, self.task)

    def to_json(self) -> str:
        d = {
            "task": self.task,
            "input": self.input_path,
            "output": self.output_path,
            "instruction": self.instruction,
            "provenance": [list(p) for p in self.provenance],
            "seed": self.seed,
        }
        if self.review is not None:
            d["review"] = self.review
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "EditRecord":
        d = json.loads(line)
        return cls(
            task=d["task"],
            input_path=d["input"],
            output_path=d["output"],
            instruction=d["instruction"],
            provenance=tuple(tuple(p) for p in d["provenance"]),
            seed=int(d["seed"]),
            review=d.get("review"),
        )


def read_manifest(path) -> list[EditRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EditRecord.from_json(line) for line in fh if line.strip()]


@dataclass
class ScenePair:
    """A pre-rendered scene-level pair (light_modify / decoration) to ingest as-is."""

    task: str
    input: str
    output: str
    instruction: str

    def __post_init__(self):
        if self.task not in ("light_modify", "decoration"):
            raise ParameterError(f"scene pairs must be light_modify or decoration, got {self.task!r}")


@dataclass
class PipelineConfig:
    """Configuration for :func:`run_pipeline`. Loaded from JSON; see README for the schema."""

    inputs: list[str] = field(default_factory=list)
    output_dir: str = "out"
    manifest: str | None = None
    fov_deg: float = DEFAULT_FOV_DEG
    view_res: int = DEFAULT_VIEW_RES
    erp_width: int | None = None
    erp_height: int | None = None
    class_blocklist: list[str] = field(default_factory=lambda: list(DEFAULT_BLOCKLIST))
    swap_pairs: bool = True
    rounds: int = 1
    refine: bool = False
    interactive_review: bool = False
    seed: int = 0
    bits: int = 8
    blend_band: int = 1
    clients: dict = field(default_factory=lambda: {"mode": "stub"})
    scene_pairs: list[ScenePair] = field(default_factory=list)
    masks: MaskParams = field(default_factory=MaskParams)

    def __post_init__(self):
        if self.rounds < 1:
            raise ParameterError(f"rounds must be >= 1, got {self.rounds}")
        if not 0 < self.fov_deg < 180:
            raise ParameterError(f"fov_deg must lie in (0, 180), got {self.fov_deg}")
        if self.bits not in (8, 16):
            raise ParameterError(f"bits must be 8 or 16, got {self.bits}")
        if self.blend_band < 0:
            raise ParameterError("blend_band must be non-negative")
        self.scene_pairs = [p if isinstance(p, ScenePair) else ScenePair(**p) for p in self.scene_pairs]
        if isinstance(self.masks, dict):
            self.masks = MaskParams.from_dict(self.masks)

    @property
    def manifest_path(self) -> Path:
        return Path(self.manifest) if self.manifest else Path(self.output_dir) / "manifest.jsonl"

    def layout(self) -> ViewportLayout:
        return cube_layout(math.radians(self.fov_deg), self.view_res)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown pipeline config keys {sorted(unknown)}")
        cfg = cls(**d)
        if base_dir is not None:
            # relative paths in a config file resolve against the file's directory
            base = Path(base_dir)
            cfg.inputs = [str(base / p) if not os.path.isabs(p) else p for p in cfg.inputs]
            if not os.path.isabs(cfg.output_dir):
                cfg.output_dir = str(base / cfg.output_dir)
            if cfg.manifest and not os.path.isabs(cfg.manifest):
                cfg.manifest = str(base / cfg.manifest)
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data.get("pipeline", data), base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)
