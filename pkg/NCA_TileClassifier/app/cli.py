# app/cli.py
"""Command-line entry point: train, simulate, experiment, export, render."""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app.controllers import nca_controller
from app.core.errors import (
    CalibrationError,
    FormatError,
    NCAError,
    ShapeRefError,
    TrainingDivergedError,
    ValidityError,
)
from app.core.utils import configure_logging
from app.models.schemas import ExperimentSpec, SimClockConfig, TrainConfig
from app.services import async_sim, shape_catalog
from app.services.quantizer import DEFAULT_FLASH_BYTES

EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_VALIDITY = 4
EXIT_IO = 5
EXIT_DIVERGED = 6
EXIT_CALIBRATION = 7
EXIT_OTHER = 1

MODES = ("sync", "listing1", "firmware")


def _clock(args) -> SimClockConfig:
    return SimClockConfig(
        update_timeout_ms=args.timeout_ms,
        send_jitter_ms=args.jitter_ms,
        message_loss_rate=args.loss_rate,
        rng_seed=args.seed,
    )


def cmd_train(args) -> int:
    config = TrainConfig(
        iterations=args.iterations,
        batch_size=args.batch_size,
        rng_seed=args.seed,
        clip_grad_norm=args.clip_grad,
    )
    report = nca_controller.train_model(config, args.out)
    print(report.summary())
    print(f"wrote {args.out}")
    return 0


def cmd_simulate(args) -> int:
    mode = args.mode_flag or args.mode or "firmware"
    shape = nca_controller.resolve_shape_ref(args.shape_ref)
    params, q = nca_controller.load_model(args.weights)
    report = nca_controller.run_mode(shape, params, q, mode, args.seed, args.max_updates, _clock(args))
    export = async_sim.export_report(report)
    if args.report_out:
        Path(args.report_out).write_text(export, encoding="utf-8")
    glyph = "0" if args.unreported_as_zero else async_sim.UNREPORTED
    sys.stdout.write(export)
    print()
    print(async_sim.render_trace(report, unreported_glyph=glyph))
    return 0


def cmd_experiment(args) -> int:
    spec = ExperimentSpec(
        name=args.name,
        mode=args.mode or nca_controller.DEFAULT_MODES[args.name],
        seeds=args.seed or [1, 2, 3, 4, 5],
        max_updates=args.max_updates,
    )
    params, q = nca_controller.load_model(args.weights)
    clock = SimClockConfig(
        update_timeout_ms=args.timeout_ms, send_jitter_ms=args.jitter_ms, message_loss_rate=args.loss_rate
    )
    report_dir = Path(args.report_dir) if args.report_dir else None
    summary = nca_controller.run_experiment(spec, params, q, clock, report_dir)
    print(nca_controller.format_summary(summary))
    return 0


def cmd_export(args) -> int:
    nca_controller.export_weights(args.weights, args.out, args.flash_bytes)
    print(f"wrote {args.out}")
    return 0


def cmd_render(args) -> int:
    target = args.target
    path = Path(target)
    if path.is_file() and path.read_text(encoding="utf-8").startswith("# mode="):
        report = async_sim.parse_report(path.read_text(encoding="utf-8"))
        glyph = "0" if args.unreported_as_zero else async_sim.UNREPORTED
        print(async_sim.render_trace(report, unreported_glyph=glyph))
    else:
        print(shape_catalog.render_shape(nca_controller.resolve_shape_ref(target)))
    return 0


def _add_clock_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timeout-ms", type=int, default=2000, help="Virtual update period per tile")
    p.add_argument("--jitter-ms", type=int, default=100, help="Uniform send jitter bound per tile per period")
    p.add_argument("--loss-rate", type=float, default=0.0, help="Probability that one message is lost")
    p.add_argument("--max-updates", type=int, default=30, help="Updates per tile (firmware) or outer steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nca-tiles", description="Self-classifying NCA tile toolkit")
    parser.add_argument("--log-level", default="WARNING", help="Logging level (INFO shows the training log)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train on the canonical digits and write a weight file")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--iterations", type=int, default=2500)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--clip-grad", action="store_true", help="Clip the global gradient norm at 1.0")
    p.add_argument("--out", default="weights.bin")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="Run one shape in sync, listing1 or firmware mode")
    p.add_argument("weights")
    p.add_argument("shape_ref", help="canonical:<d>, down:<d>, up:<d> or a shape file")
    p.add_argument("mode", nargs="?", choices=MODES)
    p.add_argument("--mode", dest="mode_flag", choices=MODES)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--report-out", help="Also write the report export to this path")
    p.add_argument("--unreported-as-zero", action="store_true", help="Show silent tiles as class 0")
    _add_clock_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="Run a catalog over several seeds and summarise convergence")
    p.add_argument("name", choices=("canonical", "scaled_down", "scaled_up"))
    p.add_argument("weights")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int, action="append", help="Repeatable; default 1..5")
    p.add_argument("--report-dir", help="Write every run's report export here")
    _add_clock_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export", help="Write the firmware constant-array listing")
    p.add_argument("weights")
    p.add_argument("--out", default="nca_weights.h")
    p.add_argument("--flash-bytes", type=int, default=DEFAULT_FLASH_BYTES)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("render", help="Render a report export or a shape")
    p.add_argument("target", help="Report export path, shape ref or shape file")
    p.add_argument("--unreported-as-zero", action="store_true")
    p.set_defaults(func=cmd_render)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    message = str(exc).replace("\n", " ")
    print(f"error kind={type(exc).__name__} message={json.dumps(message)}", file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except (ShapeRefError, ValidationError, ValueError) as exc:
        return _fail(exc, EXIT_USAGE)
    except FormatError as exc:
        return _fail(exc, EXIT_FORMAT)
    except ValidityError as exc:
        return _fail(exc, EXIT_VALIDITY)
    except TrainingDivergedError as exc:
        return _fail(exc, EXIT_DIVERGED)
    except CalibrationError as exc:
        return _fail(exc, EXIT_CALIBRATION)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except NCAError as exc:
        return _fail(exc, EXIT_OTHER)


if __name__ == "__main__":
    sys.exit(main())
