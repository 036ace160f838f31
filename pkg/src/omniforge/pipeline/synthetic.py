"""A small deterministic scene for smoke tests, demos and ``omniforge check``."""

from __future__ import annotations

import json
from pathlib import Path

from ..imagefile import write_png
from ..projection import smooth_test_erp

# boxes are [top, left, height, width] in viewport pixels for a 128 px viewport
SCENE_SCRIPT = [
    {"viewport": "front", "class": "lamp", "box": [40, 30, 24, 20]},
    {"viewport": "right", "class": "chair", "box": [70, 50, 30, 28], "reference": "table"},
    {"viewport": "back", "class": "sofa", "box": [90, 0, 20, 40]},  # touches the left border
    {"viewport": "left", "class": "floor", "box": [60, 40, 30, 30]},  # blocklisted
]


def write_synthetic_scene(root, erp_width: int = 512, seed: int = 0, rounds: int = 1) -> Path:
    """Write an ERP, a segmenter script and a pipeline config under ``root``.

    Returns the config path. The scene yields two usable instances, one
    edge-touching and one blocklisted.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    erp = smooth_test_erp(erp_width, erp_width // 2)
    write_png(root / "scene.png", erp)
    cfg = {
        "inputs": ["scene.png"],
        "output_dir": "out",
        "view_res": 128,
        "seed": seed,
        "rounds": rounds,
        "clients": {"mode": "stub", "script": SCENE_SCRIPT},
    }
    path = root / "pipeline.json"
    path.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return path
