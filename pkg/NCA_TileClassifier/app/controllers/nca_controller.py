# app/controllers/nca_controller.py
import logging
import statistics
from pathlib import Path
from typing import List, Optional, Tuple, Union

from app.core.errors import ShapeRefError
from app.models.schemas import (
    ExperimentRun,
    ExperimentSpec,
    ExperimentSummary,
    RunReport,
    SimClockConfig,
    TrainConfig,
    TrainReport,
)
from app.models.tensors import ModelParams, ShapeGrid
from app.services import async_sim, quantizer, shape_catalog, trainer
from app.services.quantizer import Quantizer

logger = logging.getLogger(__name__)

# catalog prefix used in shape refs for each experiment catalog
EXPERIMENT_PREFIX = {"canonical": "canonical", "scaled_down": "down", "scaled_up": "up"}
DEFAULT_MODES = {"canonical": "firmware", "scaled_down": "firmware", "scaled_up": "listing1"}


def valid_shape_refs() -> List[str]:
    return [f"{prefix}:{label}" for prefix, table in shape_catalog.CATALOG_PREFIXES.items() for label in sorted(table)]


def resolve_shape_ref(ref: str, allow_files: bool = True) -> ShapeGrid:
    """``canonical:<d>``, ``down:<d>``, ``up:<d>`` or, when ``allow_files``, a path to a shape file."""
    prefix, sep, label = ref.partition(":")
    if sep and prefix in shape_catalog.CATALOG_PREFIXES:
        try:
            return shape_catalog.catalog_shape(prefix, int(label))
        except (KeyError, ValueError):
            pass
    elif allow_files and Path(ref).is_file():
        return shape_catalog.load_shape_file(ref)
    suffix = " or a shape file path" if allow_files else ""
    raise ShapeRefError(f"unknown shape {ref!r}; valid names: {', '.join(valid_shape_refs())}{suffix}")


def load_model(path: Union[str, Path]) -> Tuple[ModelParams, Quantizer]:
    params, q = quantizer.load_weights(path)
    logger.info("loaded weights from %s (quantizer lo=%.6g hi=%.6g)", path, q.lo, q.hi)
    return params, q


def train_model(config: TrainConfig, out_path: Union[str, Path]) -> TrainReport:
    """Train on the canonical digits, calibrate the message quantizer and write one weight file."""
    shapes = shape_catalog.canonical_shapes()
    params, report = trainer.train(config, shapes)
    q = quantizer.calibrate(params, shapes)
    quantizer.save_weights(params, q, out_path)
    return report


def run_mode(
    shape: ShapeGrid,
    params: ModelParams,
    q: Quantizer,
    mode: str,
    seed: int,
    max_updates: int = 30,
    clock: Optional[SimClockConfig] = None,
) -> RunReport:
    if mode == "sync":
        return async_sim.sync_validate(shape, params, max_updates)
    if mode == "listing1":
        return async_sim.listing1_validate(shape, params, max_updates, rng_seed=seed)
    if mode == "firmware":
        return async_sim.firmware_run(shape, params, q, clock, rng_seed=seed, max_updates=max_updates)
    raise ValueError(f"unknown mode {mode!r}")


def run_experiment(
    spec: ExperimentSpec,
    params: ModelParams,
    q: Quantizer,
    clock: Optional[SimClockConfig] = None,
    report_dir: Optional[Path] = None,
) -> ExperimentSummary:
    runs: List[ExperimentRun] = []
    successes = 0
    shapes = shape_catalog.catalog(spec.name)
    for shape in shapes:
        all_converged = True
        for seed in spec.seeds:
            report = run_mode(shape, params, q, spec.mode, seed, spec.max_updates, clock)
            runs.append(ExperimentRun(label=shape.label, seed=seed, convergence_update=report.convergence_update))
            all_converged = all_converged and report.convergence_update is not None
            if report_dir is not None:
                report_dir.mkdir(parents=True, exist_ok=True)
                path = report_dir / f"{spec.name}_{spec.mode}_{shape.label}_seed{seed}.txt"
                path.write_text(async_sim.export_report(report), encoding="utf-8")
        successes += int(all_converged)
    converged = [r.convergence_update for r in runs if r.convergence_update is not None]
    return ExperimentSummary(
        spec=spec,
        runs=runs,
        successes=successes,
        n_shapes=len(shapes),
        median_convergence=statistics.median(converged) if converged else None,
    )


def format_summary(summary: ExperimentSummary) -> str:
    lines = [f"{'shape':>5} {'seed':>6} {'convergence':>11}"]
    for run in summary.runs:
        result = "FAIL" if run.convergence_update is None else str(run.convergence_update)
        lines.append(f"{run.label:>5} {run.seed:>6} {result:>11}")
    median = "-" if summary.median_convergence is None else f"{summary.median_convergence:g}"
    lines.append(
        f"catalog={summary.spec.name} mode={summary.spec.mode} "
        f"success={summary.successes}/{summary.n_shapes} median_convergence={median}"
    )
    return "\n".join(lines)


def export_weights(weights_path: Union[str, Path], out_path: Union[str, Path], flash_bytes: int) -> str:
    params, q = load_model(weights_path)
    text = quantizer.export_firmware_array(params, q, flash_bytes)
    Path(out_path).write_text(text, encoding="utf-8")
    return text
