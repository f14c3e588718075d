"""Desk-scale linear-probe classification harness.

A softmax regression is trained on frozen scorer features of the original
images plus any number of augmentation manifests. Accuracy differences
between runs are what matter here, not absolute numbers.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ._seeding import canonical_hash, derive_seed
from .errors import EmptySplit, SingleClass, ValidationError
from .imaging import load_rgb, sha256_file

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    feature_source: str = "fake"
    epochs: int = 30
    learning_rate: float = 0.1
    decay_factor: float = 0.1
    milestones: tuple[int, ...] = (15, 23)
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    eval_fraction: float = 0.3
    include_dropped: bool = False
    standardize: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValidationError("milestones must be strictly increasing")
        if ms and (ms[0] < 0 or ms[-1] >= self.epochs):
            raise ValidationError("milestones must lie in [0, epochs)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValidationError("eval_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "milestones" in data:
            data["milestones"] = tuple(data["milestones"])
        return cls(**data)

    def config_hash(self) -> str:
        return canonical_hash(asdict(self))


def lr_schedule(config: TrainConfig) -> list[float]:
    """Per-epoch learning rate: multiplied by ``decay_factor`` at each milestone epoch."""
    return [
        config.learning_rate * config.decay_factor ** sum(1 for m in config.milestones if m <= epoch)
        for epoch in range(config.epochs)
    ]


# ---------------------------------------------------------------- features


@dataclass
class FeatureCache:
    """Features keyed by ``(scorer_id, image checksum)``; optionally persisted as ``.npz``."""

    path: Path | None = None
    table: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "FeatureCache":
        cache = cls(Path(path) if path else None)
        if cache.path and cache.path.is_file():
            with np.load(cache.path, allow_pickle=False) as data:
                for sid, chk, vec in zip(data["scorer"], data["checksum"], data["features"]):
                    cache.table[(str(sid), str(chk))] = vec
        return cache

    def save(self) -> None:
        if self.path is None or not self.table:
            return
        keys = sorted(self.table)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "wb") as f:
            np.savez(f, scorer=np.array([k[0] for k in keys]), checksum=np.array([k[1] for k in keys]),
                     features=np.stack([self.table[k] for k in keys]))


@dataclass
class FeatureTable:
    keys: list[str]
    labels: list[str]
    features: np.ndarray
    soft_labels: list[dict[str, float] | None]
    failed: dict[str, str] = field(default_factory=dict)


def _feature_items(manifest) -> list[tuple[str, str, Path, str | None, dict | None]]:
    """(key, label_text, path, known checksum, soft label) per usable record."""
    from .dataset import DatasetManifest

    if isinstance(manifest, DatasetManifest):
        return [(r.record_id, r.label_text, manifest.resolve(r), None, None) for r in manifest.records]
    return [
        (f"{r.record_id}#{r.aug_index}", r.label_text, manifest.resolve(r), r.checksum, r.soft_label)
        for r in manifest.records
        if r.ok
    ]


def extract_features(manifest, scorer, cache: FeatureCache | None = None,
                     scorer_id: str | None = None, workers: int = 4) -> FeatureTable:
    """One feature vector per decodable record; failures are listed, not raised.

    Cache misses are scored on up to ``workers`` threads (capped by the
    scorer's ``max_concurrency``); the table order follows the manifest.
    """
    scorer_id = scorer_id or getattr(scorer, "backend_id", type(scorer).__name__)
    cache = cache if cache is not None else FeatureCache()
    items = _feature_items(manifest)

    def compute(item):
        key, _, path, checksum, _ = item
        try:
            checksum = checksum or sha256_file(path)
            vec = cache.table.get((scorer_id, checksum))
            if vec is None:
                vec = np.asarray(scorer.image_features(load_rgb(path)), dtype=np.float64)
            return checksum, vec, None
        except Exception as exc:  # unreadable file or backend error
            logger.warning("feature extraction failed for %s: %s", key, exc)
            return None, None, str(exc)

    workers = max(1, min(workers, int(getattr(scorer, "max_concurrency", 1))))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(compute, items))

    keys, labels, feats, softs, failed = [], [], [], [], {}
    for (key, label, _, _, soft), (checksum, vec, err) in zip(items, results):
        if err is not None:
            failed[key] = err
            continue
        cache.table[(scorer_id, checksum)] = vec
        keys.append(key)
        labels.append(label)
        feats.append(vec)
        softs.append(soft)
    dim = int(getattr(scorer, "dim", feats[0].shape[0] if feats else 0))
    features = np.stack(feats) if feats else np.zeros((0, dim))
    return FeatureTable(keys, labels, features, softs, failed)


# ---------------------------------------------------------------- model


@dataclass
class LinearProbe:
    weights: np.ndarray  # (D, C)
    bias: np.ndarray  # (C,)
    label_names: tuple[str, ...]
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def _prep(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.mean is not None:
            x = (x - self.mean) / self.scale
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._prep(x) @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(weights: np.ndarray, bias: np.ndarray, x: np.ndarray, targets: np.ndarray,
                  weight_decay: float = 0.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean soft-target cross-entropy plus ``weight_decay / 2 * ||params||^2``.

    ``targets`` is an (N, C) matrix of target distributions.
    """
    n = x.shape[0]
    probs = _softmax(x @ weights + bias)
    logp = np.log(np.clip(probs, 1e-300, None))
    loss = -np.sum(targets * logp) / n
    loss += 0.5 * weight_decay * (np.sum(weights**2) + np.sum(bias**2))
    diff = (probs - targets) / n
    grad_w = x.T @ diff + weight_decay * weights
    grad_b = diff.sum(axis=0) + weight_decay * bias
    return float(loss), grad_w, grad_b


@dataclass
class EvalResult:
    accuracy: float
    per_label_accuracy: dict[str, float]
    per_label_counts: dict[str, int]
    loss_curve: list[float]
    lr_curve: list[float]
    config_hash: str
    n_train: int
    n_eval: int

    def to_dict(self) -> dict:
        return asdict(self)


def _as_targets(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2:
        return y.astype(np.float64)
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y.astype(int)] = 1.0
    return out


def train_linear_probe(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_eval: np.ndarray,
    y_eval: np.ndarray,
    config: TrainConfig,
    label_names: Sequence[str] | None = None,
) -> tuple[LinearProbe, EvalResult]:
    """Momentum SGD on softmax regression; deterministic given ``config.seed``.

    ``y_train`` holds class indices or (N, C) soft targets; ``y_eval`` holds indices.
    """
    config.validate()
    x_train = np.asarray(x_train, dtype=np.float64)
    x_eval = np.asarray(x_eval, dtype=np.float64)
    y_eval = np.asarray(y_eval, dtype=int)
    if len(x_train) == 0 or len(x_eval) == 0:
        raise EmptySplit("train and eval splits must be non-empty")
    n_classes = len(label_names) if label_names is not None else int(max(np.max(y_eval), np.asarray(y_train).max())) + 1
    label_names = tuple(label_names) if label_names is not None else tuple(str(i) for i in range(n_classes))
    targets = _as_targets(y_train, n_classes)
    if n_classes < 2 or np.count_nonzero(targets.sum(axis=0) > 0) < 2:
        raise SingleClass("training needs at least two classes")

    mean = scale = None
    if config.standardize:
        mean = x_train.mean(axis=0)
        scale = x_train.std(axis=0)
        scale[scale < 1e-12] = 1.0
        xs = (x_train - mean) / scale
    else:
        xs = x_train
    dim = xs.shape[1]
    w = np.zeros((dim, n_classes))
    b = np.zeros(n_classes)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    rng = np.random.default_rng(derive_seed("probe", config.seed))
    lrs = lr_schedule(config)
    losses = []
    for lr in lrs:
        order = rng.permutation(len(xs))
        for start in range(0, len(xs), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, gw, gb = loss_and_grad(w, b, xs[idx], targets[idx], config.weight_decay)
            vw = config.momentum * vw + gw
            vb = config.momentum * vb + gb
            w -= lr * vw
            b -= lr * vb
        losses.append(loss_and_grad(w, b, xs, targets, config.weight_decay)[0])

    probe = LinearProbe(w, b, label_names, mean, scale)
    pred = probe.predict(x_eval)
    per_acc, per_count = {}, {}
    for c, name in enumerate(label_names):
        mask = y_eval == c
        per_count[name] = int(mask.sum())
        if mask.any():
            per_acc[name] = float(np.mean(pred[mask] == c))
    result = EvalResult(
        accuracy=float(np.mean(pred == y_eval)),
        per_label_accuracy=per_acc,
        per_label_counts=per_count,
        loss_curve=losses,
        lr_curve=lrs,
        config_hash=config.config_hash(),
        n_train=len(xs),
        n_eval=len(x_eval),
    )
    return probe, result


# ---------------------------------------------------------------- datasets


def split_originals(dataset, config: TrainConfig) -> tuple[list[str], list[str]]:
    """Return ``(train_ids, eval_ids)``.

    Records tagged ``val``/``test`` form the eval split when present.
    Otherwise a seeded per-label split holds out ``eval_fraction`` of each
    label (at least one image for labels with two or more).
    """
    tagged = [r for r in dataset.records if r.split in ("val", "test")]
    if tagged:
        eval_ids = {r.record_id for r in tagged}
        train = [r.record_id for r in dataset.records if r.record_id not in eval_ids]
        return train, [r.record_id for r in tagged]
    train, held = [], []
    for label in dataset.label_set:
        ids = [r.record_id for r in dataset.records if r.label_text == label]
        rng = np.random.default_rng(derive_seed("split", config.seed, label))
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_eval = int(round(config.eval_fraction * len(ids)))
        if len(ids) >= 2:
            n_eval = min(max(n_eval, 1), len(ids) - 1)
        else:
            n_eval = 0
        held += ids[:n_eval]
        train += ids[n_eval:]
    return sorted(train), sorted(held)


def _target_row(label: str, soft: dict | None, label_names: Sequence[str]) -> np.ndarray:
    row = np.zeros(len(label_names))
    if soft:
        for name, weight in soft.items():
            row[label_names.index(name)] += weight
    else:
        row[label_names.index(label)] = 1.0
    return row


@dataclass
class TrainingData:
    x_train: np.ndarray
    y_train: np.ndarray  # (N, C) targets
    x_eval: np.ndarray
    y_eval: np.ndarray
    label_names: tuple[str, ...]
    n_original: int
    n_augmented: list[int]
    excluded_dropped: int


def assemble_training_data(dataset, aug_manifests: Sequence[Any], scorer, config: TrainConfig,
                           cache: FeatureCache | None = None) -> TrainingData:
    """Originals' train split plus every usable augmented record.

    Evaluation uses held-out originals only; augmentations of held-out
    originals never enter training. Dropped records are excluded unless
    ``config.include_dropped``.
    """
    cache = cache if cache is not None else FeatureCache()
    label_names = tuple(dataset.label_set)
    train_ids, eval_ids = split_originals(dataset, config)
    held = set(eval_ids)
    orig = extract_features(dataset, scorer, cache)
    index = {k: i for i, k in enumerate(orig.keys)}
    tr = [index[k] for k in train_ids if k in index]
    ev = [index[k] for k in eval_ids if k in index]
    xs = [orig.features[tr]]
    ys = [np.stack([_target_row(orig.labels[i], None, label_names) for i in tr]) if tr else np.zeros((0, len(label_names)))]
    n_aug, excluded = [], 0
    for manifest in aug_manifests:
        table = extract_features(manifest, scorer, cache)
        status = {f"{r.record_id}#{r.aug_index}": r.filter_status for r in manifest.records}
        keep = []
        for i, key in enumerate(table.keys):
            if key.split("#")[0] in held:
                continue
            if status.get(key) == "dropped" and not config.include_dropped:
                excluded += 1
                continue
            keep.append(i)
        n_aug.append(len(keep))
        if keep:
            xs.append(table.features[keep])
            ys.append(np.stack([_target_row(table.labels[i], table.soft_labels[i], label_names) for i in keep]))
    return TrainingData(
        x_train=np.concatenate(xs),
        y_train=np.concatenate(ys),
        x_eval=orig.features[ev],
        y_eval=np.array([label_names.index(orig.labels[i]) for i in ev], dtype=int),
        label_names=label_names,
        n_original=len(tr),
        n_augmented=n_aug,
        excluded_dropped=excluded,
    )


def compare_configs(
    entries: Sequence[tuple[str, Sequence[Any]]],
    dataset,
    scorer,
    config: TrainConfig,
    seeds: Sequence[int] | None = None,
    cache: FeatureCache | None = None,
) -> list[dict]:
    """Train one probe per entry (shared split and seeds); rows sorted by accuracy, best first.

    Each entry is ``(name, manifests)``; an empty manifest list means
    originals only, several manifests are concatenated.
    """
    if len(entries) < 2:
        raise ValidationError("compare_configs needs at least two entries")
    cache = cache if cache is not None else FeatureCache()
    seeds = list(seeds) if seeds else [config.seed]
    rows = []
    for name, manifests in entries:
        data = assemble_training_data(dataset, manifests, scorer, config, cache)
        accs = []
        for seed in seeds:
            cfg = TrainConfig(**{**asdict(config), "seed": seed})
            _, result = train_linear_probe(data.x_train, data.y_train, data.x_eval, data.y_eval, cfg, data.label_names)
            accs.append(result.accuracy)
        rows.append({
            "name": name,
            "n_train": int(len(data.x_train)),
            "n_eval": int(len(data.x_eval)),
            "accuracy": float(np.mean(accs)),
            "accuracy_sd": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
            "accuracies": accs,
            "seeds": seeds,
        })
    rows.sort(key=lambda r: (-r["accuracy"], r["name"]))
    return rows


def format_table(rows: Sequence[dict]) -> str:
    width = max(len("config"), *(len(r["name"]) for r in rows))
    lines = [f"{'config':<{width}}  {'n_train':>7}  {'accuracy':>8}  {'sd':>6}"]
    for r in rows:
        lines.append(f"{r['name']:<{width}}  {r['n_train']:>7d}  {r['accuracy']:>8.4f}  {r['accuracy_sd']:>6.4f}")
    return "\n".join(lines)


def make_separable_blobs(n_per_class: int = 60, n_classes: int = 3, dim: int = 64, spread: float = 0.02,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Non-negative unit vectors clustered around well-separated class centers."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_classes, dim))
    block = dim // n_classes
    for c in range(n_classes):
        centers[c, c * block : (c + 1) * block] = 1.0
    centers += 0.1
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    xs, ys = [], []
    for c in range(n_classes):
        pts = np.clip(centers[c] + rng.normal(0.0, spread, size=(n_per_class, dim)), 0.0, None)
        xs.append(pts / np.linalg.norm(pts, axis=1, keepdims=True))
        ys.append(np.full(n_per_class, c))
    return np.concatenate(xs), np.concatenate(ys)
