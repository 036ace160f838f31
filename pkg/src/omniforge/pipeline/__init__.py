"""Editing-pair construction pipeline with pluggable model clients."""

from .clients import (
    BorderMeanInpainter,
    IdentityRefiner,
    ScriptedSegmenter,
    ServiceClients,
    StreamClient,
    SubprocessClient,
    build_clients,
    serve,
    stub_clients,
)
from .core import (
    build_removal_pair,
    composite_edits,
    compose_multi_object,
    edit_footprint,
    filter_instances,
    remove_instances,
    run_pipeline,
    split_scene,
    swap_pair,
)
from .records import EditRecord, InstanceAnnotation, PipelineConfig, ScenePair, mask_hash, read_manifest
from .templates import TEMPLATES, parse_instruction, render_instruction

__all__ = [
    "BorderMeanInpainter",
    "EditRecord",
    "IdentityRefiner",
    "InstanceAnnotation",
    "PipelineConfig",
    "ScenePair",
    "ScriptedSegmenter",
    "ServiceClients",
    "StreamClient",
    "SubprocessClient",
    "TEMPLATES",
    "build_clients",
    "build_removal_pair",
    "compose_multi_object",
    "composite_edits",
    "edit_footprint",
    "filter_instances",
    "mask_hash",
    "parse_instruction",
    "read_manifest",
    "remove_instances",
    "render_instruction",
    "run_pipeline",
    "serve",
    "split_scene",
    "stub_clients",
    "swap_pair",
]
