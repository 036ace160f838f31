"""Object-level editing-pair construction: split, segment, filter, inpaint, restitch, instruct."""

from __future__ import annotations

import logging
import os
import re
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from ..errors import ClientError, ContractError, DegenerateInputError, DimensionError
from ..geometry import ViewportLayout
from ..imagefile import read_erp, write_png
from ..masks import edge_touch_filter
from ..projection import as_erp, project_viewport, split
from .clients import ServiceClients, build_clients
from .records import EditRecord, InstanceAnnotation, PipelineConfig, mask_hash
from .templates import parse_instruction, render_instruction

log = logging.getLogger(__name__)


def split_scene(erp, layout: ViewportLayout) -> list[np.ndarray]:
    return split(erp, layout)


def filter_instances(anns: Sequence[InstanceAnnotation], blocklist: Sequence[str]) -> list[InstanceAnnotation]:
    """Drop blocklisted classes (case-insensitive), then instances touching the viewport border."""
    blocked = {b.casefold() for b in blocklist}
    kept = [a for a in anns if a.class_label.casefold() not in blocked]
    out = []
    for a in kept:
        try:
            touches = edge_touch_filter(a.mask)
        except DegenerateInputError:
            log.info("dropping %s on %s: empty mask", a.class_label, a.viewport_name)
            continue
        if not touches:
            out.append(a)
    return out


def edit_footprint(mask, spec, erp_w: int, erp_h: int, band: int = 1) -> np.ndarray:
    """ERP-space blend alpha of an edited viewport region.

    The viewport mask is dilated by ``band`` pixels and inverse-warped bilinearly,
    so alpha is 1 deep inside the edit, fades over about a pixel, and is exactly 0
    wherever no edited pixel can influence the ERP sample.
    """
    m = np.asarray(mask, dtype=np.uint8)
    if band > 0:
        kernel = cv2.getStructuringElement(cv2.MORPH_RECT, (2 * band + 1, 2 * band + 1))
        m = cv2.dilate(m, kernel)
    alpha, _ = project_viewport(m.astype(np.float64), spec, erp_w, erp_h)
    return alpha[..., 0]


def composite_edits(erp, layout: ViewportLayout, edited: dict[int, np.ndarray], masks: dict[int, np.ndarray], band: int = 1):
    """Restitch edited viewports into ``erp`` inside their footprints only.

    Within the footprint the edited viewports are blended with their stitching
    weights; unedited viewports are excluded there, since they still show the
    removed content. Outside every footprint the ERP is returned untouched.
    """
    erp = as_erp(erp)
    h, w = erp.shape[:2]
    acc = np.zeros_like(erp)
    total = np.zeros((h, w))
    alpha = np.zeros((h, w))
    for i in sorted(edited):
        spec = layout.specs[i]
        a = edit_footprint(masks[i], spec, w, h, band)
        img, wgt = project_viewport(edited[i], spec, w, h)
        wa = wgt * a
        acc += img * wa[..., None]
        total += wa
        alpha = np.maximum(alpha, a)
    out = erp.copy()
    hit = total > 0
    content = acc[hit] / total[hit][:, None]
    out[hit] = (1 - alpha[hit])[:, None] * erp[hit] + alpha[hit][:, None] * content
    return out


def remove_instances(erp, layout: ViewportLayout, anns: Sequence[InstanceAnnotation], inpainter, viewports=None, band: int = 1):
    """Inpaint each annotation in its viewport (in order) and restitch once."""
    erp = as_erp(erp)
    if viewports is None:
        viewports = split_scene(erp, layout)
    edited: dict[int, np.ndarray] = {}
    masks: dict[int, np.ndarray] = {}
    for ann in anns:
        i = layout.index(ann.viewport_name)
        spec = layout.specs[i]
        if ann.mask.shape != (spec.height, spec.width):
            raise DimensionError(f"mask {ann.mask.shape} does not match viewport {spec.height}x{spec.width}")
        current = edited.get(i, viewports[i])
        result = np.asarray(inpainter.inpaint(current, ann.mask), dtype=np.float64)
        if result.shape != np.shape(current):
            raise ClientError(f"inpainter returned shape {result.shape}, expected {np.shape(current)}")
        edited[i] = result
        masks[i] = masks[i] | ann.mask if i in masks else ann.mask.copy()
    return composite_edits(erp, layout, edited, masks, band)


def _rel(path: Path, root: Path) -> str:
    return Path(os.path.relpath(path, root)).as_posix()


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.casefold()).strip("-") or "obj"


def _single_instruction(verb: str, ann: InstanceAnnotation) -> str:
    fields = {"class": ann.class_label, "viewport": ann.viewport_name}
    if ann.reference:
        return render_instruction(f"{verb}-with-reference", {**fields, "ref": ann.reference})
    return render_instruction(verb, fields)


def _provenance(anns: Sequence[InstanceAnnotation]) -> tuple[tuple[str, str, str], ...]:
    return tuple((a.viewport_name, a.class_label, mask_hash(a.mask)) for a in anns)


def build_removal_pair(
    erp,
    layout: ViewportLayout,
    ann: InstanceAnnotation,
    clients: ServiceClients,
    out_dir,
    *,
    stem: str = "remove",
    input_path=None,
    root=None,
    seed: int = 0,
    bits: int = 8,
    band: int = 1,
    viewports=None,
    review: str | None = None,
) -> EditRecord:
    """Remove one instance and write the (original, edited) ERP pair.

    Paths in the record are relative to ``root`` (default ``out_dir``).
    Client failures propagate as :class:`ClientError`; the orchestrator skips them.
    """
    out_dir = Path(out_dir)
    root = Path(root) if root is not None else out_dir
    edited = remove_instances(erp, layout, [ann], clients.inpainter, viewports, band)
    if input_path is None:
        input_path = write_png(out_dir / "original.png", erp, bits)
    output_path = write_png(out_dir / f"{stem}.png", edited, bits)
    return EditRecord(
        task="remove",
        input_path=_rel(Path(input_path), root),
        output_path=_rel(output_path, root),
        instruction=_single_instruction("remove", ann),
        provenance=_provenance([ann]),
        seed=seed,
        review=review,
    )


def swap_pair(rec: EditRecord) -> EditRecord:
    """Turn a removal pair into an addition pair by swapping its images."""
    if rec.task != "remove":
        raise ContractError(f"swap_pair needs a remove record, got {rec.task!r}")
    tid, fields = parse_instruction(rec.instruction, "remove")
    add_tid = tid.replace("remove", "add", 1)
    return replace(
        rec,
        task="add",
        input_path=rec.output_path,
        output_path=rec.input_path,
        instruction=render_instruction(add_tid, fields),
    )


def compose_multi_object(
    erp,
    layout: ViewportLayout,
    anns: Sequence[InstanceAnnotation],
    clients: ServiceClients,
    out_dir,
    *,
    verb: str = "Add",
    stem: str = "multi",
    input_path=None,
    root=None,
    seed: int = 0,
    bits: int = 8,
    band: int = 1,
    viewports=None,
    review: str | None = None,
) -> EditRecord:
    """Several inpainting rounds, one stitch. ``verb="Add"`` makes the edited
    image the input; ``verb="Remove"`` makes it the output."""
    if len(anns) < 2:
        raise ContractError(f"multi-object composition needs >= 2 annotations, got {len(anns)}")
    out_dir = Path(out_dir)
    root = Path(root) if root is not None else out_dir
    edited = remove_instances(erp, layout, anns, clients.inpainter, viewports, band)
    if input_path is None:
        input_path = write_png(out_dir / "original.png", erp, bits)
    edited_path = write_png(out_dir / f"{stem}.png", edited, bits)
    original = _rel(Path(input_path), root)
    removed = _rel(edited_path, root)
    objects = []
    for a in anns:
        obj = {"class": a.class_label, "viewport": a.viewport_name}
        if a.reference:
            obj["ref"] = a.reference
        objects.append(obj)
    src, dst = (removed, original) if verb == "Add" else (original, removed)
    return EditRecord(
        task="multi",
        input_path=src,
        output_path=dst,
        instruction=render_instruction("multi", {"verb": verb, "objects": objects}),
        provenance=_provenance(anns),
        seed=seed,
        review=review,
    )


def _flip_multi(rec: EditRecord) -> EditRecord:
    tid, fields = parse_instruction(rec.instruction, "multi")
    fields["verb"] = "Add" if fields["verb"] == "Remove" else "Remove"
    return replace(
        rec,
        input_path=rec.output_path,
        output_path=rec.input_path,
        instruction=render_instruction(tid, fields),
    )


def _refine(rec: EditRecord, refiner, root: Path) -> EditRecord:
    refined = refiner.refine(str(root / rec.input_path), rec.instruction)
    if refined == rec.instruction:
        return rec
    try:
        return replace(rec, instruction=refined)
    except Exception as exc:  # refined text no longer matches a template
        log.warning("keeping draft instruction %r: %s", rec.instruction, exc)
        return rec


def process_scene(erp, cfg: PipelineConfig, clients: ServiceClients, scene_dir: Path, root: Path, seed: int) -> list[EditRecord]:
    layout = cfg.layout()
    review = "unreviewed" if cfg.interactive_review else None
    viewports = split_scene(erp, layout)
    anns: list[InstanceAnnotation] = []
    for name, vp in zip(layout.names, viewports):
        anns.extend(clients.segmenter.segment(vp, name))
    survivors = filter_instances(anns, cfg.class_blocklist)
    log.info("%s: %d instances, %d after filtering", scene_dir.name, len(anns), len(survivors))

    common = dict(root=root, seed=seed, bits=cfg.bits, band=cfg.blend_band, viewports=viewports, review=review)
    original = write_png(scene_dir / "original.png", erp, cfg.bits)
    records: list[EditRecord] = []
    for j, ann in enumerate(survivors):
        stem = f"remove{j:02d}_{ann.viewport_name}_{_slug(ann.class_label)}"
        try:
            rec = build_removal_pair(erp, layout, ann, clients, scene_dir, stem=stem, input_path=original, **common)
        except ClientError as exc:
            log.warning("skipping %s in %s: %s", ann.class_label, scene_dir.name, exc)
            continue
        records.append(rec)
        if cfg.swap_pairs:
            records.append(swap_pair(rec))
    if cfg.rounds >= 2 and len(survivors) >= cfg.rounds:
        try:
            multi = compose_multi_object(
                erp, layout, survivors[: cfg.rounds], clients, scene_dir, verb="Remove", input_path=original, **common
            )
        except ClientError as exc:
            log.warning("skipping multi-object pair in %s: %s", scene_dir.name, exc)
        else:
            records.append(multi)
            if cfg.swap_pairs:
                records.append(_flip_multi(multi))
    if cfg.refine and clients.refiner is not None:
        records = [_refine(r, clients.refiner, root) for r in records]
    return records


def run_pipeline(cfg: PipelineConfig, clients: ServiceClients | None = None) -> dict:
    """Build editing pairs for every input ERP and write the JSONL manifest.

    Unreadable inputs are skipped with a log line; a manifest write failure raises.
    Returns a summary with per-task counts.
    """
    if clients is None:
        clients = build_clients(cfg.clients)
        try:
            return run_pipeline(cfg, clients)
        finally:
            for c in {id(c): c for c in (clients.segmenter, clients.inpainter, clients.refiner)}.values():
                if hasattr(c, "close"):
                    c.close()
    manifest = cfg.manifest_path
    root = manifest.parent
    out_dir = Path(cfg.output_dir)
    records: list[EditRecord] = []
    skipped: list[str] = []
    for idx, path in enumerate(cfg.inputs):
        try:
            erp = read_erp(path)
        except (OSError, DimensionError) as exc:
            log.warning("skipping input %s: %s", path, exc)
            skipped.append(str(path))
            continue
        if cfg.erp_width and (erp.shape[1], erp.shape[0]) != (cfg.erp_width, cfg.erp_height or cfg.erp_width // 2):
            log.warning("skipping input %s: size %dx%d does not match config", path, erp.shape[1], erp.shape[0])
            skipped.append(str(path))
            continue
        records.extend(process_scene(erp, cfg, clients, out_dir / f"scene{idx:04d}", root, cfg.seed + idx))
    review = "unreviewed" if cfg.interactive_review else None
    for pair in cfg.scene_pairs:
        records.append(EditRecord(pair.task, pair.input, pair.output, pair.instruction, (), cfg.seed, review))

    manifest.parent.mkdir(parents=True, exist_ok=True)
    tmp = manifest.with_name(manifest.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    os.replace(tmp, manifest)
    counts = Counter(r.task for r in records)
    return {
        "counts": {task: counts.get(task, 0) for task in ("remove", "add", "multi", "light_modify", "decoration")},
        "records": len(records),
        "manifest": str(manifest),
        "skipped": skipped,
    }
