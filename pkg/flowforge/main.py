import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from flowforge.core.config import settings
from flowforge.core.exceptions import AppException, InvalidConfigError, NotFoundError
from flowforge.core.log_setup import configure_logging
from flowforge.models.dataset_models import Histogram
from flowforge.models.hyperparams import HyperParams
from flowforge.models.search_models import SearchConfig
from flowforge.services.augment_service import augment_sample
from flowforge.services.dataset_service import (
    check_manifest,
    generate_dataset,
    load_dataset,
    load_flo_directory,
    read_manifest,
)
from flowforge.services.evaluator_service import build_evaluator, parse_target
from flowforge.services.hyper_service import load_hyperparams, load_search_space, validate
from flowforge.services.scene_service import AppearancePool, sample_seed
from flowforge.services.search_service import run_search
from flowforge.services.stats_service import (
    compare_histograms,
    histogram_edges,
    motion_histogram_counts,
    render_histogram_chart,
)
from flowforge.utils.flow_io import load_flo, read_png, write_png
from flowforge.utils.flow_visualization import colorize_flow, side_by_side

logger = logging.getLogger(__name__)

EXIT_OK = 0


# --- Argument parsing ---

def _resolution(value: str) -> Tuple[int, int]:
    try:
        w, h = (int(v) for v in value.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Resolution must look like 1280x720, got {value!r}") from e
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"Resolution must be positive, got {value!r}")
    return w, h


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowforge", description="Synthetic optical flow datasets and their hyperparameter search.")
    parser.add_argument("--log-level", default=None, help=f"Logging level (default {settings.LOG_LEVEL}).")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Render a dataset of image pairs with ground-truth flow.")
    gen.add_argument("--config", help="HyperParams JSON (default: FLOWFORGE_CONFIG, then the shipped defaults).")
    gen.add_argument("--out", required=True, help="Output directory.")
    gen.add_argument("--count", type=int, required=True, help="Number of samples.")
    gen.add_argument("--seed", type=int, default=0, help="Root seed.")
    gen.add_argument("--workers", type=int, default=settings.DEFAULT_WORKERS, help="Worker processes.")
    gen.add_argument("--augment", choices=["off", "materialize"], default="off",
                     help="'materialize' also writes an augmented copy of every sample.")
    gen.add_argument("--resolution", type=_resolution, help="Override the frame size, e.g. 512x384.")

    srch = sub.add_parser("search", help="Search hyperparameters with subgroup CMA-ES.")
    srch.add_argument("--config", help="Starting HyperParams JSON.")
    srch.add_argument("--space", help="Search space JSON with per-scalar overrides.")
    srch.add_argument("--target", required=True, help="Directory of .flo files, or 'cmd:<command line>' for an external evaluator.")
    srch.add_argument("--iterations", type=int, default=8)
    srch.add_argument("--population", type=int, default=8)
    srch.add_argument("--generations", type=int, default=5, help="CMA-ES generations per iteration.")
    srch.add_argument("--sigma0", type=float, default=0.2)
    srch.add_argument("--budget", type=int, default=4, help="Samples rendered per histogram evaluation.")
    srch.add_argument("--max-workers", type=int, default=None, help="Concurrent evaluations (default: population).")
    srch.add_argument("--timeout", type=float, default=None, help="Seconds before an external evaluation is abandoned.")
    srch.add_argument("--seed", type=int, default=0)
    srch.add_argument("--resolution", type=_resolution, help="Render size for histogram evaluations.")
    group = srch.add_mutually_exclusive_group(required=True)
    group.add_argument("--out", help="Output directory for a new search.")
    group.add_argument("--resume", metavar="DIR", help="Continue the search stored in DIR.")

    stats = sub.add_parser("stats", help="Compare motion-magnitude histograms.")
    stats.add_argument("--dataset", action="append", default=[], help="Generated dataset directory (repeatable).")
    stats.add_argument("--flo-dir", action="append", default=[], help="Directory of .flo files (repeatable).")
    stats.add_argument("--augmented-copy", action="store_true", help="Add the augmented histogram of every --dataset.")
    stats.add_argument("--config", help="HyperParams JSON for on-the-fly augmentation of datasets without *_aug files.")
    stats.add_argument("--out", required=True, help="Report JSON path; the chart is written next to it as .png.")

    prev = sub.add_parser("preview", help="Render image1 | image2 | colorized flow side by side.")
    prev.add_argument("--dataset", required=True)
    prev.add_argument("--index", type=int, default=0)
    prev.add_argument("--out", required=True, help="Output PNG path.")
    return parser


def _load_config(path: Optional[str]) -> HyperParams:
    config_path = settings.resolve_config_path(path)
    logger.info(f"Loading hyperparameters from {config_path}")
    h = load_hyperparams(config_path)
    issues = validate(h)
    if issues:
        raise InvalidConfigError(f"{config_path} is invalid: " + "; ".join(str(i) for i in issues))
    return h


def _appearance_pool(h: HyperParams) -> AppearancePool:
    if not h.appearance_dir:
        raise InvalidConfigError("appearance_dir must be set in the hyperparameter config")
    return AppearancePool(h.appearance_dir)


# --- Commands ---

def cmd_generate(args: argparse.Namespace) -> int:
    h = _load_config(args.config)
    if args.resolution:
        h = h.model_copy(update={"resolution": args.resolution})
    if args.count < 0:
        raise InvalidConfigError(f"--count must be >= 0, got {args.count}")
    if args.workers < 1:
        raise InvalidConfigError(f"--workers must be >= 1, got {args.workers}")
    generate_dataset(h, _appearance_pool(h), args.out, args.count, args.seed, workers=args.workers, augment=args.augment)
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    h = _load_config(args.config)
    space = load_search_space(args.space)
    evaluator_cfg = parse_target(args.target).model_copy(
        update={"timeout_s": args.timeout, "root_seed": args.seed, "resolution": args.resolution}
    )
    cfg = SearchConfig(
        iterations=args.iterations,
        population=args.population,
        generations_per_iteration=args.generations,
        sigma0=args.sigma0,
        evaluator=evaluator_cfg,
        eval_budget=args.budget,
        seed=args.seed,
        max_workers=args.max_workers,
    )
    pool = _appearance_pool(h) if evaluator_cfg.kind == "histogram" else None
    evaluator = build_evaluator(evaluator_cfg, pool, cfg.eval_budget)
    out = args.resume or args.out
    result = run_search(cfg, space, h, evaluator, out, resume=bool(args.resume))
    logger.info(f"Best score {result.best_score:.6g} (initial {result.initial_score:.6g}); config in {out}")
    return EXIT_OK


def _augmented_flows(directory: str, config: Optional[str]):
    manifest = read_manifest(directory)
    if all(r.flow_aug is not None for r in manifest.samples):
        for record in manifest.samples:
            yield load_flo(Path(directory) / record.flow_aug)
        return
    h = _load_config(config)
    root = manifest.header.root_seed
    for sample in load_dataset(directory):
        seed = sample_seed(root, sample.provenance.index).child("augment")
        yield augment_sample(sample, h.augment, seed).flow


def cmd_stats(args: argparse.Namespace) -> int:
    if not args.dataset and not args.flo_dir:
        raise InvalidConfigError("stats needs at least one --dataset or --flo-dir")
    edges = histogram_edges().tolist()
    named: List[Tuple[str, Histogram, int]] = []

    def add(name: str, flows):
        # Entries are keyed by the path as given; a repeated path gets a counter
        taken = {n for n, _, _ in named}
        if name in taken:
            name = next(f"{name} #{k}" for k in range(2, len(taken) + 2) if f"{name} #{k}" not in taken)
        counts, total = motion_histogram_counts(flows)
        named.append((name, Histogram(edges=edges, masses=(counts / total).tolist()), total))
        logger.info(f"{name}: {total} pixels, first-bin mass {counts[0] / total:.4f}")

    for directory in args.dataset:
        name = str(directory)
        add(name, (s.flow for s in load_dataset(directory)))
        if args.augmented_copy:
            add(f"{name} (augmented)", _augmented_flows(directory, args.config))
    for directory in args.flo_dir:
        add(str(directory), load_flo_directory(directory))

    report = compare_histograms(named)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    render_histogram_chart(report, out.with_suffix(".png"))
    logger.info(f"Wrote histogram report to {out}")
    return EXIT_OK


def cmd_preview(args: argparse.Namespace) -> int:
    directory = Path(args.dataset)
    manifest = read_manifest(directory)
    check_manifest(directory, manifest)
    if not 0 <= args.index < len(manifest.samples):
        raise NotFoundError(f"Index {args.index} out of range; {directory} holds {len(manifest.samples)} samples")
    record = manifest.samples[args.index]
    panel = side_by_side([
        read_png(directory / record.image1),
        read_png(directory / record.image2),
        colorize_flow(load_flo(directory / record.flow)),
    ])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(panel, out)
    logger.info(f"Wrote preview of sample {args.index} to {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "search": cmd_search,
    "stats": cmd_stats,
    "preview": cmd_preview,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except AppException as e:
        logger.error(f"{args.command} failed: {e.detail} (Code: {e.error_code})")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
