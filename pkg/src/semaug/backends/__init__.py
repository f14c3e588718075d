"""Backend contracts, registry and built-in implementations.

Registered ids per role:

* ``fake``: deterministic CPU stand-ins (default).
* ``remote``: JSON-over-HTTP client, needs ``url=...``.
* ``blip`` / ``clip`` / ``sd15``: pretrained models (caption / score / generate).
"""

from .base import (
    ROLES,
    CaptionerBackend,
    CaptionerCapabilities,
    DiffusionBackend,
    ScorerBackend,
    create_backend,
    register_backend,
    registered_backends,
)
from .fakes import (
    FakeCaptioner,
    FakeDiffusion,
    FakeScorer,
    fake_captioner,
    fake_diffusion,
    fake_image_feature,
    fake_text_feature,
)
from .remote import RemoteCaptioner, RemoteDiffusion, RemoteScorer, make_server


def _lazy(name):
    def factory(**options):
        from . import hf

        return getattr(hf, name)(**options)

    return factory


register_backend("caption", "fake", FakeCaptioner)
register_backend("score", "fake", FakeScorer)
register_backend("generate", "fake", FakeDiffusion)
register_backend("caption", "remote", RemoteCaptioner)
register_backend("score", "remote", RemoteScorer)
register_backend("generate", "remote", RemoteDiffusion)
register_backend("caption", "blip", _lazy("BlipCaptioner"))
register_backend("score", "clip", _lazy("ClipScorer"))
register_backend("generate", "sd15", _lazy("StableDiffusionBackend"))

__all__ = [
    "ROLES",
    "CaptionerBackend",
    "CaptionerCapabilities",
    "DiffusionBackend",
    "ScorerBackend",
    "FakeCaptioner",
    "FakeDiffusion",
    "FakeScorer",
    "RemoteCaptioner",
    "RemoteDiffusion",
    "RemoteScorer",
    "create_backend",
    "fake_captioner",
    "fake_diffusion",
    "fake_image_feature",
    "fake_text_feature",
    "make_server",
    "register_backend",
    "registered_backends",
]
