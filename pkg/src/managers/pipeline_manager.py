"""Orchestrates simulation, calibration, scale, speed and evaluation stages."""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from loguru import logger

from src.core.camera import CameraCalibration
from src.core.errors import ConfigInvalid, EmptyMarkings
from src.core.lines import segments_from_tracklets
from src.core.markings import GroundTruthMarking
from src.core.track import Track
from src.core.wireframe import WireframeModel
from src.managers.calibration_manager import CalibrationManager
from src.managers.evaluation_manager import (
    counting_block,
    distance_error,
    ratio_error,
    save_histogram,
    speed_error,
)
from src.managers.manual_calibration_manager import (
    ManualCalibrationManager,
    manual_scale,
    speed_scale,
)
from src.managers.scale_manager import ScaleManager, fit_scale_regression
from src.managers.settings_manager import SettingsManager
from src.managers.simulation_manager import SceneBundle, SimulationManager
from src.managers.speed_manager import SpeedManager, SpeedMeasurement
from src.managers.track_manager import CountingResult, TrackManager
from src.utils import constants as c
from src.utils.constants import CalibrationSource, DistanceFilter, ScaleSource
from src.utils.formats import (
    RegressionFile,
    ReportFile,
    SceneConfig,
    SceneTruth,
    SystemReport,
    calibration_from_file,
    load_detections,
    load_edgelets,
    load_markings,
    load_scene,
    load_trajectories,
    load_truth,
    markings_from_file,
    save_calibration,
    save_edgelets,
    save_json,
    save_report,
    save_tracks,
)
from src.utils.image_io import load_frames, write_pgm


def supervision_level(calib_source: str, scale_source: str) -> str:
    """Which ground truth a system needs, from least to most."""
    if calib_source == CalibrationSource.ORACLE or scale_source == ScaleSource.ORACLE:
        return "oracle"
    if scale_source == ScaleSource.SPEED:
        return "ground-truth speeds"
    if calib_source == CalibrationSource.MANUAL or scale_source == ScaleSource.MANUAL:
        return "road-plane distances"
    return "automatic"


@dataclass
class Bundle:
    """Read access to a scene bundle directory."""

    root: Path
    scene: SceneConfig

    @classmethod
    def open(cls, root: str | Path) -> "Bundle":
        root = Path(root)
        return cls(root=root, scene=load_scene(root / c.SCENE_FILE))

    @property
    def image_size(self) -> tuple[int, int]:
        return self.scene.image_size

    def truth(self) -> SceneTruth:
        return load_truth(self.root / c.TRUTH_FILE)

    def markings(self) -> GroundTruthMarking:
        data = load_markings(self.root / c.MARKINGS_FILE)
        self.check_size(data.image_size, "markings")
        return markings_from_file(data)

    def check_size(self, size: tuple[int, int] | None, what: str) -> None:
        if size is not None and tuple(size) != tuple(self.image_size):
            raise ConfigInvalid(
                f"{what} is for {size[0]}x{size[1]} images, scene is "
                f"{self.image_size[0]}x{self.image_size[1]}"
            )


@dataclass
class SystemResult:
    """One calibration and scale source pair measured on a bundle."""

    name: str
    calib_source: str
    scale_source: str
    calibration: CameraCalibration
    tracks: list[Track]
    speeds: list[SpeedMeasurement]
    counting: CountingResult
    diagnostics: dict = field(default_factory=dict)


class PipelineManager:
    """Runs the pipeline stages on scene bundles.

    Stages return their results; ``run`` and the CLI decide what to write.
    """

    def __init__(
        self,
        settings: SettingsManager,
        models: Mapping[str, WireframeModel] | None = None,
    ) -> None:
        self.settings = settings
        self.models = dict(models) if models is not None else None
        self.simulator = SimulationManager(settings)
        self.tracker = TrackManager(settings)
        self.speed = SpeedManager(settings)

    def _require_models(self) -> dict[str, WireframeModel]:
        if not self.models:
            raise ConfigInvalid("scale source needs wireframe models (--models)")
        return self.models

    # --- stages -------------------------------------------------------------

    def simulate(
        self, scene: SceneConfig, seed: int, out_dir: str | Path
    ) -> SceneBundle:
        bundle = self.simulator.generate(scene, seed)
        bundle.save(out_dir)
        return bundle

    def calibrate(
        self,
        bundle: Bundle,
        source: CalibrationSource = CalibrationSource.AUTO,
        edgelets_path: str | Path | None = None,
        dump_edgelets: str | Path | None = None,
        dump_diamond: str | Path | None = None,
    ) -> tuple[CameraCalibration, dict]:
        """Calibration from the chosen source plus its diagnostics.

        Manual and oracle calibrations come with a scale; automatic ones do not.
        """
        if source == CalibrationSource.ORACLE:
            calib = calibration_from_file(bundle.truth().calibration)
            return calib, {"source": source.value}
        if source == CalibrationSource.MANUAL:
            manual = ManualCalibrationManager(self.settings, bundle.image_size)
            calib = manual.calibrate(bundle.markings())
            return calib, {"source": source.value, **manual.diagnostics}

        trajectories = bundle.root / c.TRAJECTORIES_FILE
        segments = []
        if trajectories.exists():
            tracklets = load_trajectories(trajectories, bundle.image_size)
            segments = segments_from_tracklets(
                tracklets, self.settings.min_displacement_px
            )
        manager = CalibrationManager(self.settings, bundle.image_size)
        if edgelets_path is not None:
            edgelets, size = load_edgelets(edgelets_path)
            bundle.check_size(size, "edgelet file")
            calib = manager.calibrate(segments, edgelets=edgelets)
        else:
            frames_dir = bundle.root / c.FRAMES_DIR
            masks_dir = bundle.root / c.MASKS_DIR
            frames = []
            if frames_dir.is_dir():
                masks = masks_dir if masks_dir.is_dir() else None
                frames = load_frames(frames_dir, masks)
            calib = manager.calibrate(segments, frames=frames)
        if dump_edgelets is not None:
            save_edgelets(dump_edgelets, manager.edgelets, bundle.image_size)
        if dump_diamond is not None:
            out = Path(dump_diamond)
            for name, space in (
                ("diamond_vp1.pgm", manager.first_space),
                ("diamond_vp2.pgm", manager.second_space),
            ):
                if space is not None:
                    write_pgm(out / name, space.to_uint16())
        return calib, {"source": source.value, **manager.diagnostics}

    def build_tracks(self, bundle: Bundle, calib: CameraCalibration) -> list[Track]:
        """Tracks with reference points, crossing times and lanes."""
        detections = load_detections(bundle.root / c.DETECTIONS_FILE)
        tracks = self.tracker.track_boxes(
            self.tracker.group_and_filter(detections)
        )
        self.tracker.attach_reference_points(tracks, calib, bundle.image_size)
        markings = bundle.markings()
        if markings.measurement_line is not None:
            self.tracker.locate_crossings(
                tracks, markings.measurement_line, markings.lane_boundaries
            )
        return tracks

    def count(self, bundle: Bundle, tracks: Sequence[Track]) -> CountingResult:
        truth = bundle.truth()
        passes = [(p.vehicle_id, p.lane, p.crossing_time_s) for p in truth.passes]
        return self.tracker.match_tracks_to_ground_truth(
            tracks, passes, truth.duration_s
        )

    def infer_scale(
        self,
        bundle: Bundle,
        calib: CameraCalibration,
        tracks: Sequence[Track],
        source: ScaleSource,
        regression: RegressionFile | None = None,
        models: Mapping[str, WireframeModel] | None = None,
    ) -> tuple[float, dict]:
        """Scene scale from the chosen source plus its diagnostics.

        Bounding-box sources use ``models`` or, without them, every loaded model.
        """
        if source in (ScaleSource.BBOX, ScaleSource.BBOX_REG):
            fit = None
            if source == ScaleSource.BBOX_REG:
                if regression is None:
                    raise ConfigInvalid("scale source bbox+reg needs a regression file")
                fit = (regression.alpha, regression.beta)
            scaler = ScaleManager(self.settings, bundle.image_size)
            models = models or self._require_models()
            estimate = scaler.infer_scale(tracks, models, calib, fit)
            scale = estimate.scale_reg if fit else estimate.scale
            return scale, {**scaler.diagnostics, **estimate.as_dict()}
        if source == ScaleSource.MANUAL:
            scale = manual_scale(calib, bundle.markings().d1)
            return scale, {"scale": scale}
        if source == ScaleSource.ORACLE:
            truth = calibration_from_file(bundle.truth().calibration)
            return truth.require_scale(), {"scale": truth.scale}

        # Speed scale: unit-scale speeds of matched vehicles against the truth
        unit = calib.with_scale(1.0)
        measured = {m.track_id: m for m in self.speed.measure_all(tracks, unit)}
        gt = {p.vehicle_id: p.speed_kmh for p in bundle.truth().passes}
        pairs = [
            (measured[tid].speed_kmh, gt[vid])
            for tid, vid in self.count(bundle, tracks).matches
            if tid in measured and vid in gt
        ]
        scale = speed_scale([p[0] for p in pairs], [p[1] for p in pairs])
        return scale, {"scale": scale, "pairs": len(pairs)}

    def measure(
        self, tracks: Sequence[Track], calib: CameraCalibration
    ) -> list[SpeedMeasurement]:
        return self.speed.measure_all(tracks, calib)

    def fit_regression(
        self,
        bundles: Sequence[Bundle],
        source: CalibrationSource = CalibrationSource.ORACLE,
    ) -> RegressionFile:
        """Fit ``true ~ alpha * estimated + beta`` scales over training scenes.

        The true scale of each scene comes from its measured markings under
        the same calibration the estimate was made with.
        """
        pairs = []
        for bundle in bundles:
            calib, _ = self.calibrate(bundle, source)
            tracks = self.build_tracks(bundle, calib)
            estimate, _ = self.infer_scale(bundle, calib, tracks, ScaleSource.BBOX)
            truth = manual_scale(calib, bundle.markings().d1)
            logger.debug(f"{bundle.root}: estimated {estimate:.6g}, true {truth:.6g}")
            pairs.append((estimate, truth))
        alpha, beta = fit_scale_regression(pairs)
        return RegressionFile(alpha=alpha, beta=beta, pairs=pairs)

    def evaluate_system(
        self, bundle: Bundle, system: SystemResult
    ) -> tuple[SystemReport, list[tuple[float, float]]]:
        """Metric blocks of one system and its speed-error histogram.

        Raises:
            EmptyMatches: If no matched vehicle has a measured speed.
        """
        bundle.check_size(system.calibration.image_size, f"calibration {system.name}")
        markings = bundle.markings()
        report = SystemReport(
            supervision=supervision_level(system.calib_source, system.scale_source),
            calibration_source=system.calib_source,
            scale_source=system.scale_source,
            counting=counting_block(system.counting),
            scale_m_per_unit=system.calibration.scale,
        )
        try:
            report.ratio_error = ratio_error(system.calibration, markings).to_file()
        except EmptyMarkings as e:
            logger.warning(f"{system.name}: no ratio error ({e})")
        for which, attr in (
            (DistanceFilter.VP1, "distance_error_vp1"),
            (DistanceFilter.ALL, "distance_error_all"),
        ):
            try:
                summary = distance_error(system.calibration, markings, which)
                setattr(report, attr, summary.to_file())
            except EmptyMarkings as e:
                logger.warning(f"{system.name}: no {which} distance error ({e})")
        summary, histogram = speed_error(
            system.speeds, bundle.truth().passes, system.counting.matches
        )
        report.speed_error = summary.to_file()
        return report, histogram

    def system_from_calibration(
        self,
        bundle: Bundle,
        name: str,
        calib: CameraCalibration,
        tracks: list[Track],
    ) -> SystemResult:
        """A system for a calibration file whose sources are unknown."""
        return SystemResult(
            name=name,
            calib_source="file",
            scale_source="file",
            calibration=calib,
            tracks=tracks,
            speeds=self.measure(tracks, calib),
            counting=self.count(bundle, tracks),
        )

    def run_system(
        self,
        bundle: Bundle,
        calib_source: CalibrationSource,
        scale_source: ScaleSource,
        calibration: tuple[CameraCalibration, dict] | None = None,
        regression: RegressionFile | None = None,
        name: str | None = None,
        models: Mapping[str, WireframeModel] | None = None,
    ) -> SystemResult:
        """Calibrate, scale, track and measure one system on a bundle."""
        calib, diagnostics = calibration or self.calibrate(bundle, calib_source)
        tracks = self.build_tracks(bundle, calib)
        scale, scale_diag = self.infer_scale(
            bundle, calib, tracks, scale_source, regression, models
        )
        calib = calib.with_scale(scale)
        speeds = self.measure(tracks, calib)
        return SystemResult(
            name=name or f"{calib_source.value}_{scale_source.value}",
            calib_source=calib_source.value,
            scale_source=scale_source.value,
            calibration=calib,
            tracks=tracks,
            speeds=speeds,
            counting=self.count(bundle, tracks),
            diagnostics={"calibration": diagnostics, "scale": scale_diag},
        )

    def run(
        self,
        scene: SceneConfig,
        seed: int,
        out_dir: str | Path,
        calib_sources: Sequence[CalibrationSource],
        scale_sources: Sequence[ScaleSource],
        model_subsets: Sequence[Sequence[str]] | None = None,
        regression: RegressionFile | None = None,
    ) -> ReportFile:
        """Simulate a scene and evaluate every calibration and scale pairing.

        Bounding-box scale sources run once per model subset when subsets are
        given, so single-model and combined estimates can be compared.
        """
        out = Path(out_dir)
        self.simulate(scene, seed, out / "bundle")
        bundle = Bundle.open(out / "bundle")
        systems: dict[str, SystemReport] = {}

        for calib_source in calib_sources:
            calibration = self.calibrate(bundle, calib_source)
            for scale_source in scale_sources:
                subsets: list[Sequence[str] | None] = [None]
                if model_subsets and scale_source in (
                    ScaleSource.BBOX,
                    ScaleSource.BBOX_REG,
                ):
                    subsets = list(model_subsets)
                for subset in subsets:
                    name = f"{calib_source.value}_{scale_source.value}"
                    models = None
                    if subset is not None:
                        name += "_" + "+".join(subset)
                        available = self._require_models()
                        unknown = set(subset) - set(available)
                        if unknown:
                            raise ConfigInvalid(f"unknown models {sorted(unknown)}")
                        models = {k: available[k] for k in subset}
                    system = self.run_system(
                        bundle,
                        calib_source,
                        scale_source,
                        calibration=calibration,
                        regression=regression,
                        name=name,
                        models=models,
                    )
                    report, histogram = self.evaluate_system(bundle, system)
                    systems[name] = report
                    self._write_system(out / name, bundle, system, histogram)

        result = ReportFile(systems=systems)
        save_report(out / c.REPORT_FILE, result)
        logger.info(f"Evaluated {len(systems)} system(s); report in {out}")
        return result

    def _write_system(
        self,
        out: Path,
        bundle: Bundle,
        system: SystemResult,
        histogram: list[tuple[float, float]],
    ) -> None:
        save_calibration(out / c.CALIBRATION_FILE, system.calibration)
        save_json(out / c.DIAGNOSTICS_FILE, system.diagnostics)
        save_tracks(out / c.TRACKS_FILE, system.tracks, bundle.image_size)
        self.speed.save(out / c.SPEEDS_FILE, system.speeds)
        save_histogram(out.parent / f"hist_{system.name}.csv", histogram)
