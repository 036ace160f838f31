"""
Invariant suite behind ``omniforge check``.

Each property returns ``(ok, detail)``. The oracles here are deliberately naive
(element loops, finite differences, closed-form solutions) and share no code
with the paths they check beyond the public entry points.
"""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .diffusion import (
    Conditioning,
    GuidanceConfig,
    ModelConfig,
    SegmentLayout,
    TinyVelocityModel,
    TrainConfig,
    build_attention_mask,
    cfg_combine,
    euler_sample,
    fixed_target_dataset,
    fm_loss,
    load_guidance_table,
    noise_sample,
    train_toy,
    weighted_fm_loss,
)
from .diffusion.tokens import Segment
from .geometry import cube_layout, dir_to_erp, erp_pixel_dirs, erp_to_dir, project_to_viewport
from .masks import MaskParams, generate_mask
from .projection import psnr, seam_metric, smooth_test_erp, split, stitch


def check_erp_roundtrip(quick: bool):
    w, h = (256, 128) if quick else (1024, 512)
    rng = np.random.default_rng(0)
    u = rng.uniform(0, w, 5000)
    v = rng.uniform(1e-3, h - 1e-3, 5000)
    u2, v2 = dir_to_erp(erp_to_dir(u, v, w, h), w, h)
    du = np.abs((u2 - u + w / 2) % w - w / 2)
    err = float(max(du.max(), np.abs(v2 - v).max()))
    return err < 1e-6, f"max pixel error {err:.2e}"


def check_split_stitch(quick: bool):
    w, res = (512, 128) if quick else (1024, 256)
    erp = smooth_test_erp(w, w // 2)
    layout = cube_layout(math.radians(110), res)
    out = stitch(split(erp, layout), layout, w, w // 2)
    p = psnr(erp, out)
    ratio = seam_metric(out) / max(seam_metric(erp), 1e-12)
    return p > 28 and 0.5 <= ratio <= 2.0, f"PSNR {p:.1f} dB, seam ratio {ratio:.3f}"


def check_mask_determinism(quick: bool):
    ok = True
    for kind in ("rect", "irregular"):
        params = MaskParams(kind=kind, seed=7)
        ok &= bool(np.array_equal(generate_mask(256, 128, params), generate_mask(256, 128, params)))
    return ok, "rect and irregular masks repeat under seed 7"


def _random_layout(rng) -> SegmentLayout:
    segs = []
    block = 0
    for _ in range(rng.integers(0, 4)):
        if rng.random() < 0.5:
            segs.append(Segment("text", int(rng.integers(1, 6))))
        else:
            segs.append(Segment("cond_image", int(rng.integers(1, 9)), block if rng.random() < 0.7 else None))
            block += 1
    segs.append(Segment("timestep", 1))
    views = int(rng.integers(1, 4))
    segs.append(Segment("output", views * int(rng.integers(1, 9)), block, views=views))
    return SegmentLayout(tuple(segs))


def check_attention_mask(quick: bool):
    rng = np.random.default_rng(1)
    for trial in range(20 if quick else 100):
        layout = _random_layout(rng)
        got = build_attention_mask(layout)
        owner = []
        for k, s in enumerate(layout.segments):
            owner += [k] * s.length
        n = len(owner)
        for i in range(n):
            for j in range(n):
                si, sj = layout.segments[owner[i]], layout.segments[owner[j]]
                same = si.block_id is not None and si.block_id == sj.block_id
                if got[i, j] != (j <= i or same):
                    return False, f"layout {trial}: entry ({i}, {j}) disagrees"
    return True, f"{20 if quick else 100} random layouts match the rule"


def check_loss_identities(quick: bool):
    g = torch.Generator().manual_seed(2)
    z, eps, pred, w = (torch.randn(2, 4, 4, 3, generator=g, dtype=torch.float64) for _ in range(4))
    w = w.abs()
    ok = torch.equal(noise_sample(z, eps, 1.0), z) and torch.equal(noise_sample(z, eps, 0.0), eps)
    ref = sum(((z - eps) - pred).flatten()[i].item() ** 2 for i in range(z.numel()))
    wref = sum(w.flatten()[i].item() * ((z - eps) - pred).flatten()[i].item() ** 2 for i in range(z.numel()))
    e1 = abs(fm_loss(pred, z, eps).item() - ref) / ref
    e2 = abs(weighted_fm_loss(pred, z, eps, w).item() - wref) / wref
    ok &= e1 < 1e-10 and e2 < 1e-10
    ok &= weighted_fm_loss(pred, z, eps, torch.ones_like(z)).item() == fm_loss(pred, z, eps).item()
    return bool(ok), f"relative errors {e1:.1e}, {e2:.1e}"


def check_gradients(quick: bool):
    cfg = ModelConfig(dim=16, layers=2, heads=4, n_views=2 if quick else 6, zero_init_head=False, seed=3)
    model = TinyVelocityModel(cfg)
    gen = torch.Generator().manual_seed(4)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("lora_B") or "modulation" in name:
                p.copy_(0.2 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    sample = fixed_target_dataset(1, n_views=cfg.n_views)[0]
    cond = Conditioning([("text", "a bright room"), ("image", torch.randn(8, 8, 4, generator=gen, dtype=torch.float64))])
    z_t = noise_sample(sample.z, sample.eps, 0.37)

    def residual():
        return (sample.z - sample.eps) - model.velocity(z_t, 0.37, cond)

    loss = (residual() ** 2).sum()
    model.zero_grad()
    loss.backward()
    entries = [(p, i) for p in model.parameters() for i in range(p.numel())]
    if quick:
        pick = np.random.default_rng(5).choice(len(entries), 400, replace=False)
        entries = [entries[k] for k in pick]
    gmax = max(p.grad.abs().max().item() for p in model.parameters())
    floor = 1e-7 * gmax
    h = 1e-5
    rels = []
    with torch.no_grad():
        for p, i in entries:
            flat = p.data.view(-1)
            old = flat[i].item()
            flat[i] = old + h
            rp = residual()
            flat[i] = old - h
            rm = residual()
            flat[i] = old
            # difference of squares elementwise keeps the cancellation small
            fd = ((rp - rm) * (rp + rm)).sum().item() / (2 * h)
            a = p.grad.view(-1)[i].item()
            rels.append(abs(a - fd) / max(abs(a), abs(fd), floor))
    rels = np.array(rels)
    frac = float(np.mean(rels <= 1e-4))
    return frac >= 0.95 and rels.max() <= 1e-3, f"{frac:.2%} within 1e-4, max {rels.max():.1e} over {len(rels)} entries"


def check_training(quick: bool):
    results = []
    for lora_only in (False, True):
        cfg = TrainConfig(steps=500, lora_only=lora_only, model=ModelConfig(dim=16, layers=2, heads=4))
        res = train_toy(cfg, fixed_target_dataset(1))
        results.append(res.final_loss / res.initial_loss)
    return all(r < 0.1 for r in results), f"final/initial full {results[0]:.3f}, LoRA-only {results[1]:.3f}"


def check_sampler(quick: bool):
    a = torch.linspace(-1, 1, 24, dtype=torch.float64).reshape(2, 3, 4)

    def stub(z, t, cond):
        return a - z

    z0 = torch.randn(a.shape, generator=torch.Generator().manual_seed(9), dtype=torch.float64)
    exact = a + (z0 - a) * math.exp(-1)
    errs = []
    for steps in (50, 100):
        out = euler_sample(stub, None, GuidanceConfig(steps=steps), a.shape, seed=9)
        errs.append(((out - exact).norm() / exact.norm()).item())
    again = euler_sample(stub, None, GuidanceConfig(steps=50), a.shape, seed=9)
    first = euler_sample(stub, None, GuidanceConfig(steps=50), a.shape, seed=9)
    ok = errs[0] < 0.02 and errs[1] <= 0.6 * errs[0] and torch.equal(again, first)
    return ok, f"T=50 rel error {errs[0]:.4f}, T=100/T=50 {errs[1] / errs[0]:.3f}"


def outside_box_pixels(spec, box, erp_w: int, erp_h: int, margin: float) -> np.ndarray:
    """ERP pixels whose forward projection misses ``box`` (top, left, h, w) by more than ``margin``."""
    px, py, inside = project_to_viewport(erp_pixel_dirs(erp_w, erp_h), spec)
    top, left, bh, bw = box
    near = inside & (px >= left - margin) & (px <= left + bw + margin) & (py >= top - margin) & (py <= top + bh + margin)
    return ~near


def check_pipeline(quick: bool):
    from .imagefile import read_png
    from .pipeline import PipelineConfig, read_manifest, run_pipeline
    from .pipeline.synthetic import SCENE_SCRIPT, write_synthetic_scene

    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for run in ("a", "b"):
            cfg_path = write_synthetic_scene(Path(tmp) / run)
            cfg = PipelineConfig.load(cfg_path)
            summary = run_pipeline(cfg)
            manifest = Path(summary["manifest"])
            files = sorted(manifest.parent.rglob("*.png"))
            outs.append((summary["counts"], manifest.read_bytes(), [f.read_bytes() for f in files]))
        counts = outs[0][0]
        root = manifest.parent
        layout = cfg.layout()
        worst = 0.0
        for rec in read_manifest(manifest):
            if rec.task != "remove":
                continue
            before, after = read_png(root / rec.input_path), read_png(root / rec.output_path)
            view, cls, _ = rec.provenance[0]
            box = next(e["box"] for e in SCENE_SCRIPT if e["viewport"] == view and e["class"] == cls)
            # bilinear support plus the dilation band
            outside = outside_box_pixels(layout.spec(view), box, before.shape[1], before.shape[0], cfg.blend_band + 2)
            worst = max(worst, float(np.abs(after - before)[outside].max()))
        same = outs[0][1:] == outs[1][1:]
        ok = counts["remove"] == 2 and counts["add"] == 2 and worst < 1e-6 and same
    return ok, f"{counts['remove']} remove + {counts['add']} add, max change outside footprints {worst:.1e}, runs identical {same}"


def check_guidance(quick: bool):
    g = torch.Generator().manual_seed(11)
    vu, vi, vf = (torch.randn(3, 5, generator=g, dtype=torch.float64) for _ in range(3))
    ok = torch.equal(cfg_combine(vu, vi, vf, 1.0, 1.0), vf)
    tasks = load_guidance_table()["tasks"]
    ok &= tasks["text2odi"]["gs"] == 2.5 and tasks["object_editing"]["gs"] == 3.0 and tasks["object_editing"]["igs"] == 1.8
    ok &= tasks["decoration"]["gs"] == 3.5 and tasks["decoration"]["igs"] == 1.8
    return bool(ok), "gs = igs = 1 returns v_full; table defaults present"


PROPERTIES: list[tuple[str, Callable]] = [
    ("erp-roundtrip", check_erp_roundtrip),
    ("split-stitch", check_split_stitch),
    ("mask-determinism", check_mask_determinism),
    ("attention-mask", check_attention_mask),
    ("loss-identities", check_loss_identities),
    ("gradient-check", check_gradients),
    ("training-convergence", check_training),
    ("sampler", check_sampler),
    ("pipeline", check_pipeline),
    ("guidance", check_guidance),
]


def run_checks(quick: bool = False, only=None, emit=print) -> bool:
    """Run every property, emit one PASS/FAIL line each, return True iff all pass."""
    all_ok = True
    for name, fn in PROPERTIES:
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn(quick)
        except Exception as exc:  # a crashing property is a failing property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
        all_ok &= bool(ok)
    return all_ok
