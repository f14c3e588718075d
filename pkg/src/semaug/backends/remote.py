"""JSON-over-HTTP backends.

Every call is a ``POST`` of ``{"task": ..., "payload": {...}}``; images travel
as base64 PNG. The field layout is documented in ``docs/protocol.md``.
:func:`make_server` exposes local backend objects over the same protocol.
"""

from __future__ import annotations

import base64
import json
import logging
import time
import urllib.error
import urllib.request
from dataclasses import asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Sequence

import numpy as np

from ..errors import BackendFailure, SemaugError
from ..imaging import decode_png, png_bytes
from .base import CaptionerCapabilities, prompt_text

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0
DEFAULT_RETRIES = 2


def encode_image(image: np.ndarray) -> str:
    return base64.b64encode(png_bytes(image)).decode("ascii")


def decode_image(data: str) -> np.ndarray:
    return decode_png(base64.b64decode(data))


def _prompt_wire(prompt: Any) -> dict:
    if isinstance(prompt, str):
        return {"rendered_text": prompt}
    return prompt.to_wire()


class RemoteClient:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES):
        self.url = url
        self.timeout = timeout
        self.retries = retries

    def call(self, task: str, payload: dict) -> dict:
        body = json.dumps({"task": task, "payload": payload}).encode("utf-8")
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                detail = exc.read().decode("utf-8", "replace")
                if exc.code < 500:
                    raise BackendFailure(f"{task} rejected ({exc.code}): {detail}") from exc
                last = exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            logger.warning("remote %s attempt %d failed: %s", task, attempt + 1, last)
            if attempt < self.retries:
                time.sleep(min(0.1 * 2**attempt, 2.0))
        raise BackendFailure(f"remote {task} failed after {self.retries + 1} attempts: {last}")


class RemoteCaptioner:
    capabilities = CaptionerCapabilities()

    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES,
                 max_concurrency: int = 4, backend_id: str = "remote"):
        self.client = RemoteClient(url, timeout, retries)
        self.max_concurrency = max_concurrency
        self.backend_id = backend_id

    def caption(self, image, config, seed, hint=None):
        out = self.client.call("caption", {
            "image": encode_image(image), "sampling": asdict(config), "seed": seed, "hint": hint,
        })
        return list(out["captions"])


class RemoteScorer:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES,
                 dim: int = 64, similarity_range: Sequence[float] = (-1.0, 1.0),
                 max_concurrency: int = 4, backend_id: str = "remote"):
        self.client = RemoteClient(url, timeout, retries)
        self.dim = dim
        self.similarity_range = tuple(similarity_range)
        self.max_concurrency = max_concurrency
        self.backend_id = backend_id

    def image_features(self, image):
        out = self.client.call("score", {"kind": "image_features", "image": encode_image(image)})
        return np.asarray(out["features"], dtype=np.float64)

    def text_features(self, text):
        out = self.client.call("score", {"kind": "text_features", "text": text})
        return np.asarray(out["features"], dtype=np.float64)

    def image_text_similarity(self, image, texts):
        out = self.client.call("score", {"kind": "image_text", "image": encode_image(image), "texts": list(texts)})
        return [float(s) for s in out["similarities"]]

    def image_image_similarity(self, a, b):
        out = self.client.call("score", {"kind": "image_image", "image": encode_image(a), "other": encode_image(b)})
        return float(out["similarity"])


class RemoteDiffusion:
    modes = frozenset({"img2img", "text2img"})

    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES,
                 max_concurrency: int = 1, backend_id: str = "remote"):
        self.client = RemoteClient(url, timeout, retries)
        self.max_concurrency = max_concurrency
        self.backend_id = backend_id

    def generate(self, image, prompt, guidance, noise_rate, seed, steps=100, size=None, mode=None):
        out = self.client.call("generate", {
            "image": None if image is None else encode_image(image),
            "prompt": _prompt_wire(prompt),
            "guidance": guidance,
            "noise_rate": noise_rate,
            "seed": seed,
            "steps": steps,
            "size": list(size) if size else None,
            "mode": mode or ("text2img" if image is None else "img2img"),
        })
        return decode_image(out["image"])


def handle_request(request: dict, captioner=None, scorer=None, diffusion=None) -> dict:
    """Dispatch one decoded request body to local backends (server side)."""
    from ..captioning import SamplingConfig
    from ..prompting import WeightedPrompt

    task = request.get("task")
    payload = request.get("payload") or {}
    if task == "caption" and captioner is not None:
        config = SamplingConfig(**payload["sampling"])
        config.validate()
        captions = captioner.caption(decode_image(payload["image"]), config, int(payload["seed"]), hint=payload.get("hint"))
        return {"captions": captions}
    if task == "score" and scorer is not None:
        kind = payload.get("kind")
        if kind == "image_text":
            return {"similarities": scorer.image_text_similarity(decode_image(payload["image"]), payload["texts"])}
        if kind == "image_image":
            return {"similarity": scorer.image_image_similarity(decode_image(payload["image"]), decode_image(payload["other"]))}
        if kind == "image_features":
            return {"features": scorer.image_features(decode_image(payload["image"])).tolist()}
        if kind == "text_features":
            return {"features": scorer.text_features(payload["text"]).tolist()}
        raise ValueError(f"unknown score kind {kind!r}")
    if task == "generate" and diffusion is not None:
        wire = payload["prompt"]
        prompt = WeightedPrompt.from_wire(wire) if "prompt_mode" in wire else wire["rendered_text"]
        image = None if payload.get("image") is None else decode_image(payload["image"])
        size = tuple(payload["size"]) if payload.get("size") else None
        out = diffusion.generate(image, prompt, float(payload["guidance"]), float(payload["noise_rate"]),
                                 int(payload["seed"]), steps=int(payload.get("steps", 100)), size=size,
                                 mode=payload.get("mode"))
        return {"image": encode_image(out)}
    raise ValueError(f"unsupported task {task!r}")


def make_server(host: str = "127.0.0.1", port: int = 0, captioner=None, scorer=None, diffusion=None) -> ThreadingHTTPServer:
    """HTTP server answering the protocol with the given backends. Port 0 picks a free port."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802
            length = int(self.headers.get("Content-Length", 0))
            try:
                request = json.loads(self.rfile.read(length).decode("utf-8"))
                body, status = handle_request(request, captioner, scorer, diffusion), 200
            except (ValueError, KeyError, TypeError, SemaugError) as exc:
                body, status = {"error": str(exc)}, 400
            except Exception as exc:  # backend crash
                body, status = {"error": str(exc)}, 500
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, format, *args):  # noqa: A002
            logger.debug(format, *args)

    return ThreadingHTTPServer((host, port), Handler)
