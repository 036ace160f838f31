"""
Service-client interfaces (segmenter, inpainter, refiner), deterministic stubs,
and a stdio transport that speaks the framing in :mod:`.protocol`.

Run a stub server with ``python -m omniforge.pipeline.clients [--script FILE]``.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

import cv2
import numpy as np

from ..errors import ClientError, ParameterError
from .protocol import decode_message, encode_message, read_frame, write_frame
from .records import InstanceAnnotation


class Segmenter(Protocol):
    def segment(self, image: np.ndarray, viewport_name: str) -> list[InstanceAnnotation]: ...


class Inpainter(Protocol):
    def inpaint(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray: ...


class Refiner(Protocol):
    def refine(self, image_ref: str, draft: str) -> str: ...


@dataclass
class ServiceClients:
    segmenter: Segmenter
    inpainter: Inpainter
    refiner: Refiner | None = None


class ScriptedSegmenter:
    """Returns pre-scripted rectangular instances per viewport name.

    Script entries: ``{"viewport", "class", "box": [top, left, height, width],
    "confidence", "reference"}``; the same script applies to every scene.
    """

    def __init__(self, script: Sequence[dict]):
        self.script = [dict(e) for e in script]
        for e in self.script:
            if "viewport" not in e or "class" not in e or "box" not in e:
                raise ParameterError(f"segmenter script entry needs viewport/class/box: {e}")

    def segment(self, image, viewport_name):
        h, w = np.asarray(image).shape[:2]
        out = []
        for e in self.script:
            if e["viewport"] != viewport_name:
                continue
            top, left, bh, bw = (int(v) for v in e["box"])
            mask = np.zeros((h, w), dtype=bool)
            mask[max(top, 0) : min(top + bh, h), max(left, 0) : min(left + bw, w)] = True
            out.append(
                InstanceAnnotation(
                    class_label=e["class"],
                    mask=mask,
                    viewport_name=viewport_name,
                    confidence=float(e.get("confidence", 1.0)),
                    reference=e.get("reference"),
                )
            )
        return out


class BorderMeanInpainter:
    """Fills the masked region with the mean color of the one-pixel ring around it."""

    def inpaint(self, image, mask):
        img = np.array(image, dtype=np.float64, copy=True)
        m = np.asarray(mask, dtype=bool)
        if img.shape[:2] != m.shape:
            raise ClientError(f"mask {m.shape} does not match image {img.shape[:2]}")
        if not m.any():
            return img
        kernel = cv2.getStructuringElement(cv2.MORPH_CROSS, (3, 3))
        ring = cv2.dilate(m.astype(np.uint8), kernel).astype(bool) & ~m
        source = img[ring] if ring.any() else img.reshape(-1, img.shape[-1])
        img[m] = source.mean(axis=0)
        return img


class IdentityRefiner:
    def refine(self, image_ref, draft):
        return draft


def stub_clients(script: Sequence[dict] = ()) -> ServiceClients:
    return ServiceClients(ScriptedSegmenter(script), BorderMeanInpainter(), IdentityRefiner())


def handle_request(clients: ServiceClients, header: dict, arrays: dict) -> tuple[dict, dict]:
    method = header.get("method")
    params = header.get("params", {})
    if method == "segment":
        anns = clients.segmenter.segment(arrays["image"], params["viewport_name"])
        result = []
        out_arrays = {}
        for i, a in enumerate(anns):
            key = f"mask{i}"
            out_arrays[key] = a.mask
            result.append(
                {
                    "class_label": a.class_label,
                    "viewport_name": a.viewport_name,
                    "confidence": a.confidence,
                    "reference": a.reference,
                    "mask": key,
                }
            )
        return {"ok": True, "result": {"instances": result}}, out_arrays
    if method == "inpaint":
        return {"ok": True, "result": {}}, {"image": clients.inpainter.inpaint(arrays["image"], arrays["mask"])}
    if method == "refine":
        if clients.refiner is None:
            raise ClientError("no refiner configured")
        return {"ok": True, "result": {"instruction": clients.refiner.refine(params["image_ref"], params["draft"])}}, {}
    raise ClientError(f"unknown method {method!r}")


def serve(stream_in, stream_out, clients: ServiceClients) -> int:
    """Answer framed requests until EOF; returns the number handled."""
    handled = 0
    while True:
        frame = read_frame(stream_in)
        if frame is None:
            return handled
        header, arrays = decode_message(frame)
        try:
            resp, out_arrays = handle_request(clients, header, arrays)
        except Exception as exc:  # report, keep serving
            resp, out_arrays = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}, {}
        write_frame(stream_out, encode_message(resp, out_arrays))
        handled += 1


class StreamClient:
    """Client side of the protocol over a pair of binary streams.

    Implements the Segmenter, Inpainter and Refiner interfaces at once.
    """

    def __init__(self, stream_in, stream_out):
        self._in = stream_in
        self._out = stream_out
        self._lock = threading.Lock()

    def call(self, method: str, params: dict | None = None, arrays: dict | None = None):
        with self._lock:
            write_frame(self._out, encode_message({"method": method, "params": params or {}}, arrays))
            frame = read_frame(self._in)
        if frame is None:
            raise ClientError(f"server closed the stream during {method!r}")
        header, out = decode_message(frame)
        if not header.get("ok"):
            raise ClientError(header.get("error", "unknown client error"))
        return header.get("result", {}), out

    def segment(self, image, viewport_name):
        result, arrays = self.call("segment", {"viewport_name": viewport_name}, {"image": np.asarray(image, dtype=np.float64)})
        return [
            InstanceAnnotation(
                class_label=r["class_label"],
                mask=arrays[r["mask"]],
                viewport_name=r["viewport_name"],
                confidence=float(r["confidence"]),
                reference=r.get("reference"),
            )
            for r in result["instances"]
        ]

    def inpaint(self, image, mask):
        _, arrays = self.call(
            "inpaint", arrays={"image": np.asarray(image, dtype=np.float64), "mask": np.asarray(mask, dtype=bool)}
        )
        return arrays["image"]

    def refine(self, image_ref, draft):
        result, _ = self.call("refine", {"image_ref": image_ref, "draft": draft})
        return result["instruction"]


class SubprocessClient(StreamClient):
    """Launches a server command and talks to it over its stdin/stdout."""

    def __init__(self, command: Sequence[str]):
        self.proc = subprocess.Popen(list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        super().__init__(self.proc.stdout, self.proc.stdin)

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=30)
            self.proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def build_clients(spec: dict) -> ServiceClients:
    """Clients from a config ``clients`` block: ``{"mode": "stub", "script": [...]}``
    or ``{"mode": "subprocess", "command": [...]}``."""
    mode = spec.get("mode", "stub")
    if mode == "stub":
        return stub_clients(spec.get("script", ()))
    if mode == "subprocess":
        client = SubprocessClient(spec["command"])
        return ServiceClients(client, client, client)
    raise ParameterError(f"unknown client mode {mode!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve deterministic stub clients over stdio.")
    parser.add_argument("--script", help="JSON file with the scripted segmenter entries")
    args = parser.parse_args(argv)
    script = []
    if args.script:
        with open(args.script, encoding="utf-8") as fh:
            script = json.load(fh)
    serve(sys.stdin.buffer, sys.stdout.buffer, stub_clients(script))
    return 0


if __name__ == "__main__":
    sys.exit(main())
