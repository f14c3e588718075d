"""Backend contracts and the process-level backend registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from ..errors import UnknownBackend

ROLES = ("caption", "score", "generate")


@dataclass(frozen=True)
class CaptionerCapabilities:
    modes: frozenset[str] = frozenset({"beam", "nucleus"})
    max_count: int = 64
    min_len: int = 1
    max_len: int = 64


@runtime_checkable
class CaptionerBackend(Protocol):
    backend_id: str
    capabilities: CaptionerCapabilities
    max_concurrency: int

    def caption(self, image: np.ndarray, config: Any, seed: int, hint: str | None = None) -> list[str]:
        """Return ``config.count`` captions for ``image``."""


@runtime_checkable
class ScorerBackend(Protocol):
    backend_id: str
    dim: int
    similarity_range: tuple[float, float]
    max_concurrency: int

    def image_features(self, image: np.ndarray) -> np.ndarray: ...

    def text_features(self, text: str) -> np.ndarray: ...

    def image_text_similarity(self, image: np.ndarray, texts: Sequence[str]) -> list[float]: ...

    def image_image_similarity(self, a: np.ndarray, b: np.ndarray) -> float: ...


@runtime_checkable
class DiffusionBackend(Protocol):
    backend_id: str
    modes: frozenset[str]
    max_concurrency: int

    def generate(
        self,
        image: np.ndarray | None,
        prompt: Any,
        guidance: float,
        noise_rate: float,
        seed: int,
        steps: int = 100,
        size: tuple[int, int] | None = None,
        mode: str | None = None,
    ) -> np.ndarray:
        """img2img when ``image`` is given, text2img otherwise. ``size`` is (H, W)."""


def prompt_text(prompt: Any) -> str:
    """Accept either a plain string or a WeightedPrompt."""
    return prompt if isinstance(prompt, str) else prompt.rendered_text


_REGISTRY: dict[tuple[str, str], Callable[..., Any]] = {}


def register_backend(role: str, backend_id: str, factory: Callable[..., Any]) -> None:
    if role not in ROLES:
        raise ValueError(f"unknown backend role {role!r}")
    _REGISTRY[(role, backend_id)] = factory


def create_backend(role: str, backend_id: str, **options: Any) -> Any:
    try:
        factory = _REGISTRY[(role, backend_id)]
    except KeyError:
        known = sorted(b for r, b in _REGISTRY if r == role)
        raise UnknownBackend(f"no {role} backend {backend_id!r}; known: {known}") from None
    return factory(**options)


def registered_backends(role: str | None = None) -> list[tuple[str, str]]:
    return sorted(k for k in _REGISTRY if role is None or k[0] == role)
