"""Command line entry point: ``semaug <subcommand> [flags]``.

Every invocation ends with one JSON summary line on stdout. Exit codes:
0 success, 1 validation/usage error, 2 partial failure (some records failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from ._seeding import derive_seed
from .captioning import CaptionCache, caption_record
from .config import PipelineConfig, load_config
from .dataset import read_manifest, scan_dataset, select_split, write_manifest
from .errors import SemaugError, ValidationError
from .imaging import load_rgb

logger = logging.getLogger("semaug")

SUBCOMMANDS = ("scan", "caption", "augment", "baseline", "filter", "eval-similarity", "grid", "train", "compare")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _split_backend_flags(argv: Sequence[str]) -> tuple[list[str], dict[str, str]]:
    """Pull ``--backend.<role>=<id>`` / ``--backend.<role> <id>`` out of argv."""
    rest, backends = [], {}
    i = 0
    while i < len(argv):
        arg = argv[i]
        i += 1
        if not arg.startswith("--backend."):
            rest.append(arg)
            continue
        key = arg[len("--backend."):]
        if "=" in key:
            role, value = key.split("=", 1)
        elif i < len(argv):
            role, value = key, argv[i]
            i += 1
        else:
            raise UsageError(f"{arg} needs a value")
        if role not in ("caption", "score", "generate"):
            raise UsageError(f"unknown backend role {role!r}")
        backends[role] = value
    return rest, backends


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--workers", type=int, help="generation/scoring worker count")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--no-cache", action="store_true", help="ignore the caption cache")
    common.add_argument("--dry-run", action="store_true", help="validate only, write nothing")
    common.add_argument("--prompt-mode", choices=("none", "label_only", "caption_only", "full"))
    common.add_argument("--noise-rate", type=float)
    common.add_argument("--k-augment", type=int)
    common.add_argument("--log-file", help="structured per-record log (default <out-dir>/run.log)")

    parser = _Parser(prog="semaug", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("scan", parents=[common], help="index root/<label>/<image> into a manifest")
    p.add_argument("root")
    p.add_argument("--out", required=True, help="manifest JSON path")

    p = sub.add_parser("caption", parents=[common], help="caption, score and select captions only")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("augment", parents=[common], help="run the generation pipeline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--text2img", action="store_true", help="generate from the prompt without the source image")
    p.add_argument("--strategy", choices=("random", "clip_filter"))
    p.add_argument("--bracket-mode", action="store_true", default=None)

    p = sub.add_parser("baseline", parents=[common], help="store perturbation-baseline augmentations")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", required=True, choices=("random_erasing", "cutmix", "randaugment"))
    p.add_argument("--baseline-config", help="JSON with re/cutmix/ra parameter overrides")

    p = sub.add_parser("filter", parents=[common], help="apply post-hoc filters to a copy of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", help="dataset manifest (label and original filters)")
    p.add_argument("--kind", action="append", required=True, choices=("label", "prompt", "original"))
    p.add_argument("--out", help="filtered manifest path (default <out-dir>/manifest.filtered.jsonl)")

    p = sub.add_parser("eval-similarity", parents=[common], help="per-label original/augmented similarity")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, help="augmentations per original (default: k_augment)")
    p.add_argument("--out", help="report JSON path (a CSV is written next to it)")

    p = sub.add_parser("grid", parents=[common], help="render an originals x methods comparison grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--manifest", action="append", required=True, metavar="METHOD=PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=8)

    p = sub.add_parser("train", parents=[common], help="linear probe on originals plus augmentations")
    p.add_argument("--dataset", required=True)
    p.add_argument("--manifest", action="append", default=[])

    p = sub.add_parser("compare", parents=[common], help="rank augmentation configs by probe accuracy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--entry", action="append", required=True, metavar="NAME=PATH[,PATH...]",
                   help="NAME= with no paths means originals only")
    p.add_argument("--seeds", type=int, nargs="+")
    return parser


def resolve_config(args, backend_flags: dict[str, str]) -> PipelineConfig:
    config = load_config(args.config)
    overrides = dict(
        global_seed=args.seed,
        workers=args.workers,
        out_dir=args.out_dir,
        prompt_mode=args.prompt_mode,
        noise_rate=args.noise_rate,
        k_augment=args.k_augment,
        log_file=args.log_file,
    )
    if args.no_cache:
        overrides["use_cache"] = False
    if backend_flags:
        overrides["backends"] = {**config.backends, **backend_flags}
    if getattr(args, "text2img", False):
        overrides["generation_mode"] = "text2img"
    if getattr(args, "strategy", None):
        overrides["selection_strategy"] = args.strategy
    if getattr(args, "bracket_mode", None):
        overrides["bracket_mode"] = True
    config = config.with_overrides(**overrides)
    config.validate()
    return config


def _attach_log(config: PipelineConfig) -> logging.Handler:
    path = Path(config.log_file or Path(config.out_dir) / "run.log")
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    return handler


def _scorer(config: PipelineConfig):
    from .backends import create_backend

    return create_backend("score", config.backends["score"], **config.backend_options.get("score", {}))


def cmd_scan(args, config):
    manifest = scan_dataset(args.root)
    if not args.dry_run:
        write_manifest(manifest, args.out)
    return {"records": len(manifest.records), "labels": len(manifest.label_set),
            "skipped": len(manifest.skipped), "manifest": args.out}, 0


def cmd_caption(args, config):
    from .generation import Backends

    dataset = read_manifest(args.dataset)
    if args.dry_run:
        return {"records": len(select_split(dataset, config.augment_splits)), "config_hash": config.config_hash()}, 0
    backends = Backends.from_config(config)
    cache_path = config.caption_cache or Path(config.out_dir) / "captions.jsonl"
    cache = CaptionCache.load(cache_path if config.use_cache else None, config.caption_fingerprint())
    cache.path = Path(cache_path)
    failed = reused = 0
    for rec in select_split(dataset, config.augment_splits):
        seed = derive_seed(config.global_seed, rec.record_id)
        if cache.get(rec.record_id, seed) is not None:
            reused += 1
            continue
        try:
            scored = caption_record(rec.record_id, load_rgb(dataset.resolve(rec)), config.sampling,
                                    backends.captioner, backends.scorer, config.selection_strategy, seed,
                                    config.random_pool, rec.label_text if config.caption_hint == "label" else None)
        except (SemaugError, OSError) as exc:
            failed += 1
            logger.warning(json.dumps({"event": "caption_failed", "record_id": rec.record_id, "error": str(exc)}))
            continue
        cache.put(scored)
        logger.info(json.dumps({"event": "captioned", "record_id": rec.record_id, "s_star": scored.s_star}))
    cache.save()
    return {"captioned": len(cache.entries), "reused": reused, "failed": failed,
            "cache": str(cache_path), "config_hash": config.config_hash()}, 2 if failed else 0


def cmd_augment(args, config):
    from .generation import run_pipeline

    dataset = read_manifest(args.dataset)
    if args.dry_run:
        n = len(select_split(dataset, config.augment_splits))
        return {"records": n, "planned": n * config.k_augment, "config_hash": config.config_hash()}, 0
    manifest = run_pipeline(dataset, config, progress=sys.stderr.isatty())
    counts = manifest.counts()
    path = Path(config.out_dir) / "manifest.jsonl"
    return {"manifest": str(path), "records": len(manifest.records), **counts,
            "config_hash": manifest.config_hash}, 2 if counts["failed"] else 0


def cmd_baseline(args, config):
    from .baselines import PerturbationConfig, run_baseline

    dataset = read_manifest(args.dataset)
    data = json.loads(Path(args.baseline_config).read_text()) if args.baseline_config else {}
    pconf = PerturbationConfig.from_dict({**data, "method": args.method, "seed": config.global_seed})
    pconf.validate()
    if args.dry_run:
        return {"records": len(select_split(dataset, config.augment_splits)), "method": args.method}, 0
    manifest = run_baseline(dataset, pconf, config.out_dir, k_augment=config.k_augment, splits=config.augment_splits)
    return {"manifest": str(Path(config.out_dir) / "manifest.jsonl"), "records": len(manifest.records),
            "method": args.method, "config_hash": manifest.config_hash}, 0


def cmd_filter(args, config):
    from .filters import copy_filtered_manifest, run_filter_chain
    from .generation import AugmentationManifest

    manifest = AugmentationManifest.read(args.manifest)
    dataset = read_manifest(args.dataset) if args.dataset else None
    if any(k in ("label", "original") for k in args.kind) and dataset is None:
        raise UsageError("--dataset is required for label and original filters")
    if args.dry_run:
        return {"records": len(manifest.records), "filters": args.kind}, 0
    out_path = Path(args.out) if args.out else Path(config.out_dir) / "manifest.filtered.jsonl"
    if out_path.resolve() == Path(args.manifest).resolve():
        raise UsageError("refusing to overwrite the input manifest")
    filtered, reports = run_filter_chain(manifest, args.kind, _scorer(config), dataset)
    copy_filtered_manifest(filtered, out_path)
    report_paths = []
    for rep in reports:
        rp = out_path.with_name(f"{out_path.stem}.{rep.filter_kind}_report.json")
        rep.write(rp)
        report_paths.append(str(rp))
    failed = sum(1 for rep in reports for d in rep.decisions if d.kept is None)
    return {"manifest": str(out_path), "reports": report_paths, **filtered.counts(),
            "config_hash": filtered.config_hash}, 2 if failed else 0


def cmd_eval_similarity(args, config):
    from .evaluation import per_label_similarity
    from .generation import AugmentationManifest

    manifest = AugmentationManifest.read(args.manifest)
    dataset = read_manifest(args.dataset)
    if args.dry_run:
        return {"records": len(manifest.records)}, 0
    report = per_label_similarity(manifest, dataset, _scorer(config), k=args.k or config.k_augment)
    out = Path(args.out) if args.out else Path(config.out_dir) / "similarity.json"
    json_path, csv_path = report.write(out)
    return {"report": str(json_path), "csv": str(csv_path), "overall": report.overall,
            "per_label": report.per_label, "config_hash": manifest.config_hash}, 0


def cmd_grid(args, config):
    from .evaluation import render_grid
    from .generation import AugmentationManifest

    dataset = read_manifest(args.dataset)
    methods = {}
    for item in args.manifest:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--manifest expects METHOD=PATH, got {item!r}")
        methods[name] = AugmentationManifest.read(path)
    if args.dry_run:
        return {"methods": list(methods)}, 0
    ids = None
    if args.limit:
        present = set().union(*[{r.record_id for r in m.records} for m in methods.values()])
        ids = [r.record_id for r in dataset.records if r.record_id in present][: args.limit]
    rows, cols = render_grid(dataset, methods, args.out, record_ids=ids)
    return {"grid": args.out, "rows": rows, "columns": cols}, 0


def cmd_train(args, config):
    from .generation import AugmentationManifest
    from .trainer import assemble_training_data, train_linear_probe

    dataset = read_manifest(args.dataset)
    manifests = [AugmentationManifest.read(p) for p in args.manifest]
    if args.dry_run:
        return {"manifests": len(manifests)}, 0
    tconf = config.trainer
    data = assemble_training_data(dataset, manifests, _scorer(config), tconf)
    _, result = train_linear_probe(data.x_train, data.y_train, data.x_eval, data.y_eval, tconf, data.label_names)
    print(f"accuracy {result.accuracy:.4f} on {result.n_eval} held-out originals ({result.n_train} training images)")
    return {"accuracy": result.accuracy, "per_label_accuracy": result.per_label_accuracy, "n_train": result.n_train,
            "n_eval": result.n_eval, "excluded_dropped": data.excluded_dropped,
            "config_hash": result.config_hash}, 0


def cmd_compare(args, config):
    from .generation import AugmentationManifest
    from .trainer import compare_configs, format_table

    dataset = read_manifest(args.dataset)
    entries = []
    for item in args.entry:
        name, sep, paths = item.partition("=")
        if not sep:
            raise UsageError(f"--entry expects NAME=PATH[,PATH...], got {item!r}")
        entries.append((name, [AugmentationManifest.read(p) for p in paths.split(",") if p]))
    if args.dry_run:
        return {"entries": [e[0] for e in entries]}, 0
    rows = compare_configs(entries, dataset, _scorer(config), config.trainer, seeds=args.seeds)
    print(format_table(rows))
    return {"ranking": rows}, 0


HANDLERS = {
    "scan": cmd_scan,
    "caption": cmd_caption,
    "augment": cmd_augment,
    "baseline": cmd_baseline,
    "filter": cmd_filter,
    "eval-similarity": cmd_eval_similarity,
    "grid": cmd_grid,
    "train": cmd_train,
    "compare": cmd_compare,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    handler = None
    try:
        argv, backend_flags = _split_backend_flags(argv)
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose from {', '.join(SUBCOMMANDS)}")
        config = resolve_config(args, backend_flags)
        if not args.dry_run and args.command not in ("scan",):
            handler = _attach_log(config)
        summary, code = HANDLERS[args.command](args, config)
    except (SemaugError, ValueError) as exc:
        print(json.dumps({"status": "error", "error": f"{type(exc).__name__}: {exc}"}))
        return 1
    finally:
        if handler is not None:
            logger.removeHandler(handler)
            handler.close()
    status = "ok" if code == 0 else "partial_failure"
    print(json.dumps({"status": status, "command": args.command, **summary}, sort_keys=True, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
