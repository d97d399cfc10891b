"""Command-line surface: one executable with a subcommand per pipeline stage."""

import argparse
from collections.abc import Sequence
from pathlib import Path

from loguru import logger

from src.core.errors import AutocalibError, ConfigInvalid
from src.core.wireframe import default_models
from src.managers.evaluation_manager import save_histogram
from src.managers.pipeline_manager import Bundle, PipelineManager
from src.managers.settings_manager import SettingsManager
from src.utils import constants as c
from src.utils.constants import CalibrationSource, ScaleSource
from src.utils.formats import (
    ReportFile,
    load_calibration,
    load_models,
    load_regression,
    load_scene,
    save_calibration,
    save_json,
    save_regression,
    save_report,
    save_tracks,
)

# CLI flag -> settings name
_TUNABLE_FLAGS = {
    "tau": "tau",
    "iou_threshold": "iou_threshold",
    "keep_fraction": "keep_fraction",
    "diamond_resolution": "diamond_resolution",
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON settings file")
    parser.add_argument("--log-level", default="INFO")
    parser.add_argument("--tau", type=int)
    parser.add_argument("--iou-threshold", type=float)
    parser.add_argument("--keep-fraction", type=float)
    parser.add_argument("--diamond-resolution", type=int)
    parser.add_argument(
        "--models",
        nargs="+",
        help="wireframe models by shipped id or JSON path (default: combi, sedan)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autocalib",
        description="Traffic camera calibration and vehicle speed measurement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene bundle")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", help="calibrate the camera of a bundle")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--calib-source",
        type=CalibrationSource,
        choices=list(CalibrationSource),
        default=CalibrationSource.AUTO,
    )
    p.add_argument("--scale-source", type=ScaleSource, choices=list(ScaleSource))
    p.add_argument("--regression")
    p.add_argument("--edgelets", help="precomputed edgelets instead of frames")
    p.add_argument("--dump-edgelets")
    p.add_argument("--dump-diamond", help="directory for accumulator images")

    p = sub.add_parser("infer-scale", help="add a scene scale to a calibration")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument(
        "--scale-source",
        type=ScaleSource,
        choices=list(ScaleSource),
        default=ScaleSource.BBOX,
    )
    p.add_argument("--regression")
    p.add_argument("--out", required=True)

    p = sub.add_parser("measure", help="track vehicles and measure their speeds")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="compare calibrations against ground truth")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--calibration", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-regression", help="fit the scale correction")
    _common(p)
    p.add_argument("--bundles", nargs="+", required=True)
    p.add_argument(
        "--calib-source",
        type=CalibrationSource,
        choices=list(CalibrationSource),
        default=CalibrationSource.ORACLE,
    )
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="simulate, calibrate, measure and evaluate")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--calib-source",
        type=CalibrationSource,
        choices=list(CalibrationSource),
        nargs="+",
        default=[CalibrationSource.AUTO],
    )
    p.add_argument(
        "--scale-source",
        type=ScaleSource,
        choices=list(ScaleSource),
        nargs="+",
        default=[ScaleSource.BBOX],
    )
    p.add_argument(
        "--model-subsets",
        nargs="+",
        help="comma-separated model ids per subset, e.g. combi sedan combi,sedan",
    )
    p.add_argument("--regression")
    return parser


def load_settings(args: argparse.Namespace) -> SettingsManager:
    """Defaults, then the settings file, then explicit flags."""
    settings = SettingsManager(args.config)
    for flag, name in _TUNABLE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings.set(name, value)
    return settings


def _pipeline(args: argparse.Namespace) -> PipelineManager:
    models = load_models(args.models) if args.models else default_models()
    return PipelineManager(load_settings(args), models)


def cmd_simulate(args: argparse.Namespace) -> None:
    _pipeline(args).simulate(load_scene(args.scene), args.seed, args.out)


def cmd_calibrate(args: argparse.Namespace) -> None:
    pipeline = _pipeline(args)
    bundle = Bundle.open(args.bundle)
    out = Path(args.out)
    calib, diagnostics = pipeline.calibrate(
        bundle,
        args.calib_source,
        edgelets_path=args.edgelets,
        dump_edgelets=args.dump_edgelets,
        dump_diamond=args.dump_diamond,
    )
    if args.scale_source is not None:
        regression = load_regression(args.regression) if args.regression else None
        tracks = pipeline.build_tracks(bundle, calib)
        scale, scale_diag = pipeline.infer_scale(
            bundle, calib, tracks, args.scale_source, regression
        )
        calib = calib.with_scale(scale)
        diagnostics["scale"] = scale_diag
    save_calibration(out / c.CALIBRATION_FILE, calib)
    save_json(out / c.DIAGNOSTICS_FILE, diagnostics)


def cmd_infer_scale(args: argparse.Namespace) -> None:
    pipeline = _pipeline(args)
    bundle = Bundle.open(args.bundle)
    calib = load_calibration(args.calibration)
    bundle.check_size(calib.image_size, "calibration")
    regression = load_regression(args.regression) if args.regression else None
    tracks = pipeline.build_tracks(bundle, calib)
    scale, diagnostics = pipeline.infer_scale(
        bundle, calib, tracks, args.scale_source, regression
    )
    out = Path(args.out)
    save_calibration(out / c.CALIBRATION_FILE, calib.with_scale(scale))
    save_json(out / c.DIAGNOSTICS_FILE, {"scale": diagnostics})


def cmd_measure(args: argparse.Namespace) -> None:
    pipeline = _pipeline(args)
    bundle = Bundle.open(args.bundle)
    calib = load_calibration(args.calibration)
    bundle.check_size(calib.image_size, "calibration")
    tracks = pipeline.build_tracks(bundle, calib)
    speeds = pipeline.measure(tracks, calib)
    out = Path(args.out)
    save_tracks(out / c.TRACKS_FILE, tracks, bundle.image_size)
    pipeline.speed.save(out / c.SPEEDS_FILE, speeds)


def _system_name(path: Path) -> str:
    # run/<system>/calibration.json is named after its directory
    return path.parent.name if path.stem == "calibration" else path.stem


def cmd_evaluate(args: argparse.Namespace) -> None:
    pipeline = _pipeline(args)
    bundle = Bundle.open(args.bundle)
    out = Path(args.out)
    systems = {}
    for path in args.calibration:
        calib = load_calibration(path)
        bundle.check_size(calib.image_size, f"calibration {path}")
        name = _system_name(Path(path))
        tracks = pipeline.build_tracks(bundle, calib)
        system = pipeline.system_from_calibration(bundle, name, calib, tracks)
        report, histogram = pipeline.evaluate_system(bundle, system)
        systems[name] = report
        save_histogram(out / f"hist_{name}.csv", histogram)
    save_report(out / c.REPORT_FILE, ReportFile(systems=systems))


def cmd_fit_regression(args: argparse.Namespace) -> None:
    pipeline = _pipeline(args)
    bundles = [Bundle.open(b) for b in args.bundles]
    save_regression(args.out, pipeline.fit_regression(bundles, args.calib_source))


def cmd_run(args: argparse.Namespace) -> None:
    pipeline = _pipeline(args)
    subsets = [s.split(",") for s in args.model_subsets] if args.model_subsets else None
    regression = load_regression(args.regression) if args.regression else None
    pipeline.run(
        load_scene(args.scene),
        args.seed,
        args.out,
        args.calib_source,
        args.scale_source,
        model_subsets=subsets,
        regression=regression,
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "infer-scale": cmd_infer_scale,
    "measure": cmd_measure,
    "evaluate": cmd_evaluate,
    "fit-regression": cmd_fit_regression,
    "run": cmd_run,
}


def execute(args: argparse.Namespace) -> int:
    """Run a parsed command and return the process exit code."""
    try:
        COMMANDS[args.command](args)
    except AutocalibError as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return ConfigInvalid.exit_code
    return c.EXIT_OK


def run(argv: Sequence[str] | None = None) -> int:
    return execute(build_parser().parse_args(argv))
