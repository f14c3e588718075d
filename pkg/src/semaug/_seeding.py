from __future__ import annotations

import hashlib
import json
from typing import Any


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from an arbitrary tuple of JSON-able parts.

    Used for per-record seeds so that results never depend on the order in
    which workers pick up records.
    """
    blob = json.dumps(parts, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def stable_text_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big") >> 1


def canonical_hash(obj: Any, length: int = 16) -> str:
    blob = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:length]
