"""
scan-seg - command-line front end

Exit codes: 0 success, 1 invalid input / configuration, 2 runtime failure.
Progress is logged to standard error; results go to files.

Commands that write outputs refuse to overwrite them without --force;
precompute is idempotent and never needs it.
"""
import logging
import sys
import time
from pathlib import Path
from typing import Annotated, List, Optional, Sequence

import click
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from src.config import settings
from src.exceptions import ArgumentError, ScanSegError, ScanSegRuntimeError
from src.models import EvalReport, FusionMode, GeomFeature, Split, SynthProfile
from src.services.pipeline import (
    apply_overrides,
    default_ablation_grid,
    evaluate_dataset,
    infer,
    load_checkpoint,
    load_grid,
    load_pipeline_config,
    run_ablation,
    train_pipeline,
    write_report_tsv,
)
from src.services.precompute import precompute, precompute_dataset
from src.services.synth_generator import generate_dataset
from src.storage import LabelDAO

logger = logging.getLogger(__name__)
console = Console(stderr=True)

app = typer.Typer(
    name="scan-seg",
    help="Skin segmentation of 3D head scans from multi-view features and mesh geometry.",
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)

ThreadsOption = Annotated[Optional[int], typer.Option("--threads", min=0, help="Worker threads (default: logical cores)")]
ConfigOption = Annotated[Optional[Path], typer.Option("--config", help="PipelineConfig JSON file")]
ForceOption = Annotated[bool, typer.Option("--force", help="Overwrite existing outputs")]


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=False)],
        force=True,
    )


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ArgumentError(f"{path} already exists; pass --force to overwrite")


def _parse_list(value: Optional[str]) -> List[str]:
    if value is None:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]


def _parse_seeds(value: str) -> List[int]:
    try:
        seeds = [int(s) for s in _parse_list(value)]
    except ValueError as e:
        raise ArgumentError(f"--seeds expects comma-separated integers, got '{value}'") from e
    if not seeds or any(s < 0 for s in seeds):
        raise ArgumentError(f"--seeds expects non-negative integers, got '{value}'")
    return seeds


def _parse_geom(value: Optional[str]) -> Optional[List[GeomFeature]]:
    if value is None:
        return None
    try:
        return [GeomFeature(item) for item in _parse_list(value)]
    except ValueError as e:
        allowed = ", ".join(g.value for g in GeomFeature)
        raise ArgumentError(f"--geom-features expects a comma-separated subset of {allowed}, got '{value}'") from e


def _report_table(reports: Sequence[EvalReport], title: str) -> Table:
    table = Table(title=title)
    table.add_column("config")
    table.add_column("split")
    table.add_column("seed", justify="right")
    table.add_column("mIoU", justify="right")
    table.add_column("d_surface (mm)", justify="right")
    for r in reports:
        table.add_row(r.config_id, r.split.value, str(r.seed), f"{r.miou:.4f}", f"{r.d_mean_mm:.3f} ± {r.d_std_mm:.3f}")
    return table


# ============================================================================
# Commands
# ============================================================================

@app.command("gen-data")
def gen_data(
    out: Annotated[Path, typer.Option("--out", help="Dataset directory")],
    count: Annotated[int, typer.Option("--count", min=1, help="Number of samples")],
    seed: Annotated[int, typer.Option("--seed", min=0, help="First sample seed")] = 0,
    profile: Annotated[str, typer.Option("--profile", help="tiny | test | large")] = "test",
    test_fraction: Annotated[float, typer.Option("--test-fraction", help="Share of samples held out for testing")] = 0.25,
    threads: ThreadsOption = None,
    force: ForceOption = False,
) -> None:
    """Generate a labeled procedural dataset (destructive with --force)."""
    try:
        synth_profile = SynthProfile.named(profile)
    except ValueError as e:
        raise ArgumentError(str(e)) from e
    split = generate_dataset(out, count, seed, test_fraction, synth_profile, threads, force)
    console.print(f"{len(split.train)} train / {len(split.test)} test samples in {out}")


@app.command("precompute")
def precompute_command(
    dataset: Annotated[Optional[Path], typer.Option("--dataset", help="Dataset directory")] = None,
    sample: Annotated[Optional[Path], typer.Option("--sample", help="Single sample directory")] = None,
    config: ConfigOption = None,
    threads: ThreadsOption = None,
) -> None:
    """Build the cached bases, descriptors and fused features (idempotent)."""
    if (dataset is None) == (sample is None):
        raise ArgumentError("pass exactly one of --dataset or --sample")
    pipeline_config = load_pipeline_config(config)
    if sample is not None:
        precompute(sample, pipeline_config, threads)
    else:
        precompute_dataset(dataset, pipeline_config, threads)


@app.command("train")
def train_command(
    dataset: Annotated[Path, typer.Option("--dataset", help="Dataset directory")],
    out: Annotated[Path, typer.Option("--out", help="Checkpoint file to write")],
    config: ConfigOption = None,
    seed: Annotated[Optional[int], typer.Option("--seed", min=0)] = None,
    epochs: Annotated[Optional[int], typer.Option("--epochs", min=1)] = None,
    fusion: Annotated[Optional[FusionMode], typer.Option("--fusion", case_sensitive=True)] = None,
    geom_features: Annotated[Optional[str], typer.Option("--geom-features", help="Comma-separated: hks,sigma30,color,xyz")] = None,
    threads: ThreadsOption = None,
    force: ForceOption = False,
) -> None:
    """Train a segmenter on the train split and write a checkpoint."""
    pipeline_config = apply_overrides(
        load_pipeline_config(config),
        seed=seed,
        epochs=epochs,
        fusion=fusion,
        geom_features=_parse_geom(geom_features),
    )
    result = train_pipeline(dataset, pipeline_config, out, threads, force)
    console.print(f"{pipeline_config.config_id}: best epoch {result.best_epoch}, checkpoint {out}")


@app.command("infer")
def infer_command(
    sample: Annotated[Path, typer.Option("--sample", help="Sample directory")],
    checkpoint: Annotated[Path, typer.Option("--checkpoint", help="Checkpoint file")],
    out: Annotated[Path, typer.Option("--out", help="Label file to write")],
    config: ConfigOption = None,
    force: ForceOption = False,
) -> None:
    """Predict per-vertex skin labels for one sample."""
    _refuse_overwrite(out, force)
    pipeline_config = load_pipeline_config(config)
    params = load_checkpoint(checkpoint)
    precompute(sample, pipeline_config)
    labels, _ = infer(params, sample, pipeline_config)
    out.parent.mkdir(parents=True, exist_ok=True)
    LabelDAO.write(labels, out)
    console.print(f"{int(labels.sum())}/{labels.shape[0]} vertices labeled skin -> {out}")


@app.command("eval")
def eval_command(
    dataset: Annotated[Path, typer.Option("--dataset", help="Dataset directory")],
    checkpoint: Annotated[Path, typer.Option("--checkpoint", help="Checkpoint file")],
    out: Annotated[Path, typer.Option("--out", help="Report TSV to write")],
    config: ConfigOption = None,
    split: Annotated[Split, typer.Option("--split")] = Split.TEST,
    threads: ThreadsOption = None,
    force: ForceOption = False,
) -> None:
    """Evaluate a checkpoint on one split and write the report TSV."""
    _refuse_overwrite(out, force)
    pipeline_config = load_pipeline_config(config)
    params = load_checkpoint(checkpoint)
    report = evaluate_dataset(params, dataset, pipeline_config, split, threads)
    write_report_tsv([report], out)
    console.print(_report_table([report], f"Evaluation ({checkpoint.name})"))


@app.command("ablate")
def ablate_command(
    dataset: Annotated[Path, typer.Option("--dataset", help="Dataset directory")],
    out: Annotated[Path, typer.Option("--out", help="Report TSV to write")],
    grid: Annotated[Optional[Path], typer.Option("--grid", help="JSON list of configurations")] = None,
    seeds: Annotated[str, typer.Option("--seeds", help="Comma-separated seeds")] = "0",
    threads: ThreadsOption = None,
    force: ForceOption = False,
) -> None:
    """Train and evaluate every configuration of the ablation grid."""
    _refuse_overwrite(out, force)
    configs = load_grid(grid) if grid is not None else default_ablation_grid()
    result = run_ablation(dataset, configs, _parse_seeds(seeds), threads)
    write_report_tsv(result.reports, out)
    console.print(_report_table(result.reports, "Ablation"))
    if result.failures:
        for tag, message in result.failures.items():
            logger.error(f"{tag}: {message}")
        if not result.reports:
            raise ScanSegRuntimeError(f"all {len(result.failures)} ablation rows failed")


# ============================================================================
# Entry points
# ============================================================================

def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command and return its exit code

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        0 on success, 1 on validation errors, 2 on runtime failures
    """
    setup_logging()
    command = typer.main.get_command(app)
    args = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    try:
        command.main(args=args, prog_name="scan-seg", standalone_mode=False)
    except click.exceptions.Abort:
        console.print("Aborted.")
        return 1
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except ScanSegRuntimeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2
    except ScanSegError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected {type(e).__name__}: {e}")
        return 2
    logger.debug(f"Finished in {time.perf_counter() - started:.1f}s")
    return 0


def run() -> None:
    """Console-script entry point"""
    sys.exit(main())
