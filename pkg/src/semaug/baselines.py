"""Perturbation baselines: Random Erasing, CutMix and RandAugment.

All three work on ``uint8`` (H, W, 3) arrays and draw randomness only from
the ``numpy.random.Generator`` they are given.

RandAugment magnitude table (``m = M / M_max``; signed ops flip sign with
probability 1/2):

=============  ====================  ===========================
op             range at m = 1         effect
=============  ====================  ===========================
identity       -                      none
auto_contrast  -                      per-channel min/max stretch
equalize       -                      per-channel histogram equalization
rotate         +-30 degrees           rotation about center, fill 0
solarize       threshold 255 -> 0     invert pixels >= threshold
color          factor 1 +- 0.9        saturation enhance
posterize      8 -> 4 bits            keep top bits (rounded)
contrast       factor 1 +- 0.9        contrast enhance
brightness     factor 1 +- 0.9        brightness enhance
sharpness      factor 1 +- 0.9        sharpness enhance
shear_x        +-0.3                  x' = x + s * y, fill 0
shear_y        +-0.3                  y' = y + s * x, fill 0
translate_x    +-(150/331) * width    shift, fill 0
translate_y    +-(150/331) * height   shift, fill 0
=============  ====================  ===========================

The ranges follow torchvision's RandAugment with 31 magnitude bins, which
is where ``M_max = 30`` comes from.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from ._seeding import canonical_hash, derive_seed
from .errors import DegenerateImage, DimensionMismatch, ValidationError

BASELINE_METHODS = ("random_erasing", "cutmix", "randaugment")


@dataclass(frozen=True)
class RandomErasingParams:
    p: float = 0.5
    s_l: float = 0.02
    s_h: float = 0.4
    r1: float = 0.3


@dataclass(frozen=True)
class CutMixParams:
    alpha: float = 1.0
    prob: float = 0.5


@dataclass(frozen=True)
class RandAugmentParams:
    N: int = 2
    M: int = 9
    M_max: int = 30


@dataclass(frozen=True)
class PerturbationConfig:
    method: str = "randaugment"
    re: RandomErasingParams = field(default_factory=RandomErasingParams)
    cutmix: CutMixParams = field(default_factory=CutMixParams)
    ra: RandAugmentParams = field(default_factory=RandAugmentParams)
    seed: int = 0

    def validate(self) -> None:
        if self.method not in BASELINE_METHODS:
            raise ValidationError(f"unknown baseline method {self.method!r}")
        re, cm, ra = self.re, self.cutmix, self.ra
        if not (0.0 <= re.p <= 1.0 and 0.0 <= cm.prob <= 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")
        if not 0.0 < re.s_l <= re.s_h < 1.0:
            raise ValidationError("need 0 < s_l <= s_h < 1")
        if not 0.0 < re.r1 <= 1.0:
            raise ValidationError("need 0 < r1 <= 1")
        if cm.alpha <= 0:
            raise ValidationError("cutmix alpha must be positive")
        if ra.N < 1 or not 0 <= ra.M <= ra.M_max:
            raise ValidationError("need N >= 1 and 0 <= M <= M_max")

    @classmethod
    def from_dict(cls, data: dict) -> "PerturbationConfig":
        data = dict(data)
        return cls(
            method=data.pop("method", "randaugment"),
            re=RandomErasingParams(**data.pop("re", {})),
            cutmix=CutMixParams(**data.pop("cutmix", {})),
            ra=RandAugmentParams(**data.pop("ra", {})),
            **data,
        )

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- random erasing


def erase_box(height: int, width: int, area_frac: float, aspect: float) -> tuple[int, int]:
    """(h, w) of the erased rectangle, clamped inside the image."""
    target = area_frac * height * width
    h = int(round(math.sqrt(target * aspect)))
    w = int(round(math.sqrt(target / aspect)))
    return min(max(h, 1), height), min(max(w, 1), width)


def random_erasing(image: np.ndarray, params: RandomErasingParams, rng: np.random.Generator) -> np.ndarray:
    """With probability ``p`` overwrite one random rectangle with uniform noise."""
    img = np.asarray(image, dtype=np.uint8)
    h_img, w_img = img.shape[:2]
    if h_img < 2 or w_img < 2:
        raise DegenerateImage("random erasing needs at least a 2x2 image")
    if rng.random() >= params.p:
        return img.copy()
    area = rng.uniform(params.s_l, params.s_h)
    aspect = rng.uniform(params.r1, 1.0 / params.r1)
    h, w = erase_box(h_img, w_img, area, aspect)
    top = int(rng.integers(0, h_img - h + 1))
    left = int(rng.integers(0, w_img - w + 1))
    out = img.copy()
    out[top : top + h, left : left + w] = rng.integers(0, 256, size=(h, w, img.shape[2]), dtype=np.uint8)
    return out


# ---------------------------------------------------------------- cutmix


def cutmix_box(height: int, width: int, lam: float, cy: int, cx: int) -> tuple[int, int, int, int]:
    """Clipped box ``(y1, y2, x1, x2)`` of side ``floor(dim * sqrt(1 - lam))`` centred at (cy, cx)."""
    ratio = math.sqrt(1.0 - lam)
    cut_w, cut_h = int(width * ratio), int(height * ratio)
    x1, x2 = np.clip([cx - cut_w // 2, cx + cut_w // 2 + cut_w % 2], 0, width)
    y1, y2 = np.clip([cy - cut_h // 2, cy + cut_h // 2 + cut_h % 2], 0, height)
    return int(y1), int(y2), int(x1), int(x2)


def _onehot(label, num_classes: int | None) -> np.ndarray:
    arr = np.asarray(label, dtype=np.float64)
    if arr.ndim == 1:
        return arr
    if num_classes is None:
        raise ValidationError("integer labels need num_classes")
    out = np.zeros(num_classes)
    out[int(label)] = 1.0
    return out


def cutmix(image_a: np.ndarray, label_a, image_b: np.ndarray, label_b, params: CutMixParams,
           rng: np.random.Generator, num_classes: int | None = None, lam: float | None = None,
           center: tuple[int, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Paste a box of ``image_b`` into ``image_a`` with probability ``prob``.

    The label weight is recomputed from the clipped box area. ``lam`` and
    ``center`` (cy, cx) override the random draws; a forced ``lam`` also
    bypasses the probability gate.
    """
    a = np.asarray(image_a, dtype=np.uint8)
    b = np.asarray(image_b, dtype=np.uint8)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cutmix images differ: {a.shape} vs {b.shape}")
    ya, yb = _onehot(label_a, num_classes), _onehot(label_b, num_classes)
    if lam is None:
        if rng.random() >= params.prob:
            return a.copy(), ya
        lam = float(rng.beta(params.alpha, params.alpha))
    h, w = a.shape[:2]
    if center is None:
        center = (int(rng.integers(h)), int(rng.integers(w)))
    y1, y2, x1, x2 = cutmix_box(h, w, lam, *center)
    out = a.copy()
    out[y1:y2, x1:x2] = b[y1:y2, x1:x2]
    lam_adj = 1.0 - ((y2 - y1) * (x2 - x1)) / (h * w)
    return out, lam_adj * ya + (1.0 - lam_adj) * yb


# ---------------------------------------------------------------- randaugment

RA_OPS = (
    "identity", "auto_contrast", "equalize", "rotate", "solarize", "color", "posterize",
    "contrast", "brightness", "sharpness", "shear_x", "shear_y", "translate_x", "translate_y",
)
_SIGNED = {"rotate", "color", "contrast", "brightness", "sharpness", "shear_x", "shear_y", "translate_x", "translate_y"}


def magnitude_for(op: str, M: float, M_max: float = 30, size: tuple[int, int] = (224, 224)) -> float:
    """Unsigned magnitude of ``op`` at level ``M``; ``size`` is (H, W) for translations."""
    m = M / M_max
    if op == "rotate":
        return 30.0 * m
    if op in ("shear_x", "shear_y"):
        return 0.3 * m
    if op == "translate_x":
        return 150.0 / 331.0 * size[1] * m
    if op == "translate_y":
        return 150.0 / 331.0 * size[0] * m
    if op in ("color", "contrast", "brightness", "sharpness"):
        return 0.9 * m
    if op == "solarize":
        return 255.0 * (1.0 - m)
    if op == "posterize":
        return float(int(round(8 - 4 * m)))
    return 0.0


def _apply_op(img: Image.Image, op: str, mag: float) -> Image.Image:
    w, h = img.size
    if op == "identity":
        return img
    if op == "auto_contrast":
        return ImageOps.autocontrast(img)
    if op == "equalize":
        return ImageOps.equalize(img)
    if op == "rotate":
        return img.rotate(mag, resample=Image.NEAREST, fillcolor=(0, 0, 0))
    if op == "solarize":
        return ImageOps.solarize(img, threshold=mag)
    if op == "posterize":
        return ImageOps.posterize(img, int(mag))
    if op == "color":
        return ImageEnhance.Color(img).enhance(1.0 + mag)
    if op == "contrast":
        return ImageEnhance.Contrast(img).enhance(1.0 + mag)
    if op == "brightness":
        return ImageEnhance.Brightness(img).enhance(1.0 + mag)
    if op == "sharpness":
        return ImageEnhance.Sharpness(img).enhance(1.0 + mag)
    affine = {
        "shear_x": (1, mag, 0, 0, 1, 0),
        "shear_y": (1, 0, 0, mag, 1, 0),
        "translate_x": (1, 0, -mag, 0, 1, 0),
        "translate_y": (1, 0, 0, 0, 1, -mag),
    }[op]
    return img.transform((w, h), Image.AFFINE, affine, resample=Image.NEAREST, fillcolor=(0, 0, 0))


def apply_ops(image: np.ndarray, ops: Sequence[str], params: RandAugmentParams,
              rng: np.random.Generator) -> np.ndarray:
    img = Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB")
    size = (img.size[1], img.size[0])
    for op in ops:
        mag = magnitude_for(op, params.M, params.M_max, size)
        if op in _SIGNED and rng.random() < 0.5:
            mag = -mag
        img = _apply_op(img, op, mag)
    return np.asarray(img, dtype=np.uint8).copy()


def rand_augment(image: np.ndarray, params: RandAugmentParams, rng: np.random.Generator,
                 ops: Sequence[str] | None = None) -> np.ndarray:
    """Apply ``N`` ops drawn uniformly with replacement from :data:`RA_OPS`.

    ``ops`` replaces the random draw.
    """
    if ops is None:
        ops = [RA_OPS[int(i)] for i in rng.integers(0, len(RA_OPS), size=params.N)]
    return apply_ops(image, ops, params, rng)


# ---------------------------------------------------------------- stored runs


def run_baseline(dataset, config: PerturbationConfig, out_dir: str | os.PathLike, k_augment: int = 1,
                 splits: Sequence[str] | None = ("train",)):
    """Write perturbed copies of every selected record as an augmentation manifest.

    CutMix partners are drawn (seeded) from the other selected records; the
    mixed label is stored in ``soft_label``.
    """
    from .dataset import select_split
    from .generation import MANIFEST_NAME, AugmentationManifest, AugRecord, make_header, output_relpath
    from .imaging import load_rgb, write_png

    config.validate()
    out_dir = Path(out_dir)
    records = select_split(dataset, splits)
    labels = list(dataset.label_set)
    cfg_hash = canonical_hash({"baseline": config.to_dict(), "k_augment": k_augment})
    out = []
    for rec in records:
        image = load_rgb(dataset.resolve(rec))
        for k in range(k_augment):
            seed = derive_seed(config.seed, rec.record_id, k)
            rng = np.random.default_rng(seed)
            soft = None
            if config.method == "random_erasing":
                result = random_erasing(image, config.re, rng)
            elif config.method == "randaugment":
                result = rand_augment(image, config.ra, rng)
            else:
                others = [r for r in records if r.record_id != rec.record_id] or [rec]
                partner = others[int(rng.integers(len(others)))]
                other = load_rgb(dataset.resolve(partner))
                if other.shape != image.shape:
                    other = np.asarray(Image.fromarray(other).resize((image.shape[1], image.shape[0])))
                result, mix = cutmix(image, labels.index(rec.label_text), other, labels.index(partner.label_text),
                                     config.cutmix, rng, num_classes=len(labels))
                soft = {labels[i]: float(v) for i, v in enumerate(mix) if v > 0}
            rel = output_relpath(rec.label_raw, rec.record_id, k)
            checksum = write_png(out_dir / rel, result)
            out.append(AugRecord(
                record_id=rec.record_id, aug_index=k, label_raw=rec.label_raw, label_text=rec.label_text,
                method=config.method, backend_id=f"baseline:{config.method}", mode="perturbation",
                source_path=rec.source_path, output_path=rel, checksum=checksum, seed=seed, soft_label=soft,
            ))
    header = make_header(cfg_hash, config.method, {"baseline": config.to_dict(), "k_augment": k_augment},
                         record_count=len(out))
    manifest = AugmentationManifest(header=header, records=out, root=out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    return manifest
