"""Manages pipeline tunables persisted as JSON."""

import json
import os

from loguru import logger

from src.utils import constants as c
from src.utils.constants import ReferencePointMode

THREADS_ENV = "AUTOCALIB_THREADS"

# name -> (default, lower bound, upper bound)
_NUMERIC: dict[str, tuple[float, float, float]] = {
    "tau": (c.TAU, 1, 1000),
    "iou_threshold": (c.IOU_THRESHOLD, 0.0, 1.01),
    "keep_fraction": (c.KEEP_FRACTION, 0.001, 1.0),
    "diamond_resolution": (c.DIAMOND_RESOLUTION, 11, 4001),
    "vp1_exclusion_deg": (c.VP1_EXCLUSION_DEG, 0.0, 89.0),
    "seed_threshold_fraction": (c.SEED_THRESHOLD_FRACTION, 1e-6, 1.0),
    "edgelet_weight_cap": (c.EDGELET_WEIGHT_CAP, 1.0, 1e12),
    "min_segments": (c.MIN_SEGMENTS, 1, 10**9),
    "min_edgelets": (c.MIN_EDGELETS, 1, 10**9),
    "min_displacement_px": (c.MIN_DISPLACEMENT_PX, 0.0, 1e6),
    "max_horizon_inclination_deg": (c.MAX_HORIZON_INCLINATION_DEG, 0.0, 90.0),
    "measurement_sigma_px": (c.MEASUREMENT_SIGMA_PX, 1e-6, 1e3),
    "process_sigma_px": (c.PROCESS_SIGMA_PX, 1e-6, 1e3),
    "gate_sigmas": (c.GATE_SIGMAS, 0.1, 100.0),
    "max_missed_frames": (c.MAX_MISSED_FRAMES, 0, 1000),
    "min_track_detections": (c.MIN_TRACK_DETECTIONS, 2, 10**6),
    "occlusion_iou": (c.OCCLUSION_IOU, 0.0, 1.0),
    "scale_grid_size": (c.SCALE_GRID_SIZE, 2, 10**5),
    "scale_grid_span": (c.SCALE_GRID_SPAN, 0.01, 0.99),
    "kde_grid_size": (c.KDE_GRID_SIZE, 16, 10**6),
    "manual_grid_spacing_px": (c.MANUAL_GRID_SPACING_PX, 0.01, 1e4),
}

_INTEGERS = {
    "tau",
    "diamond_resolution",
    "min_segments",
    "min_edgelets",
    "max_missed_frames",
    "min_track_detections",
    "scale_grid_size",
    "kde_grid_size",
}


class SettingsManager:
    """Loads and saves pipeline tunables to a JSON file.

    Every value falls back to its built-in default and is clamped to a sane
    range. ``path=None`` keeps the defaults without touching the disk.
    """

    def __init__(self, path: str | None = None) -> None:
        for name, (default, _, _) in _NUMERIC.items():
            setattr(self, name, int(default) if name in _INTEGERS else float(default))
        self.focal_range: tuple[float, float] | None = None
        self.manual_focal_range: tuple[float, float] = c.MANUAL_FOCAL_RANGE
        self.reference_point_mode: ReferencePointMode = ReferencePointMode.BOX3D_FRONT
        self.threads: int = _threads_from_env()
        self._path = path
        if path is not None:
            self._load()

    # Numeric tunables, assigned in __init__ from _NUMERIC
    tau: int
    iou_threshold: float
    keep_fraction: float
    diamond_resolution: int
    vp1_exclusion_deg: float
    seed_threshold_fraction: float
    edgelet_weight_cap: float
    min_segments: int
    min_edgelets: int
    min_displacement_px: float
    max_horizon_inclination_deg: float
    measurement_sigma_px: float
    process_sigma_px: float
    gate_sigmas: float
    max_missed_frames: int
    min_track_detections: int
    occlusion_iou: float
    scale_grid_size: int
    scale_grid_span: float
    kde_grid_size: int
    manual_grid_spacing_px: float

    def _load(self) -> None:
        """Load settings from file. Use defaults on error."""
        try:
            with open(self._path) as f:  # type: ignore[arg-type]
                data = json.load(f)
            if not isinstance(data, dict):
                raise TypeError("settings root must be an object")
            for name in _NUMERIC:
                if name in data:
                    self.set(name, data[name])
            if "focal_range" in data and data["focal_range"] is not None:
                lo, hi = (float(v) for v in data["focal_range"])
                self.focal_range = (min(lo, hi), max(lo, hi))
            if "manual_focal_range" in data:
                lo, hi = (float(v) for v in data["manual_focal_range"])
                self.manual_focal_range = (min(lo, hi), max(lo, hi))
            if "reference_point_mode" in data:
                try:
                    self.reference_point_mode = ReferencePointMode(
                        data["reference_point_mode"]
                    )
                except ValueError:
                    logger.warning(
                        f"Unknown reference_point_mode "
                        f"{data['reference_point_mode']!r}; keeping default."
                    )
        except (FileNotFoundError, json.JSONDecodeError, ValueError, TypeError):
            logger.warning(
                f"Could not load settings from {self._path}; using defaults."
            )

    def set(self, name: str, value: float) -> None:
        """Assign a numeric tunable, clamped to its allowed range."""
        if name not in _NUMERIC:
            raise KeyError(f"unknown setting {name!r}")
        _, lo, hi = _NUMERIC[name]
        clamped = max(lo, min(hi, float(value)))
        if clamped != float(value):
            logger.warning(f"Setting {name}={value} clamped to {clamped}")
        setattr(self, name, int(round(clamped)) if name in _INTEGERS else clamped)
        if name == "diamond_resolution" and self.diamond_resolution % 2 == 0:
            self.diamond_resolution += 1

    def as_dict(self) -> dict:
        data: dict = {name: getattr(self, name) for name in _NUMERIC}
        data["focal_range"] = list(self.focal_range) if self.focal_range else None
        data["manual_focal_range"] = list(self.manual_focal_range)
        data["reference_point_mode"] = self.reference_point_mode.value
        return data

    def save(self, path: str | None = None) -> None:
        """Save current settings to file."""
        target = path or self._path
        if target is None:
            raise ValueError("no settings path to save to")
        try:
            with open(target, "w") as f:
                json.dump(self.as_dict(), f, indent=2)
            logger.debug(f"Settings saved to {target}")
        except OSError:
            logger.warning(f"Could not save settings to {target}.")


def _threads_from_env() -> int:
    raw = os.environ.get(THREADS_ENV)
    default = os.cpu_count() or 1
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={raw!r}")
        return default
