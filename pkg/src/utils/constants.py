"""
Pipeline constants and configuration defaults.
"""

from enum import StrEnum


class CalibrationSource(StrEnum):
    AUTO = "auto"
    MANUAL = "manual"
    ORACLE = "oracle"


class ScaleSource(StrEnum):
    BBOX = "bbox"
    BBOX_REG = "bbox+reg"
    MANUAL = "manual"
    SPEED = "speed"
    ORACLE = "oracle"


class DistanceFilter(StrEnum):
    VP1 = "vp1"
    ALL = "all"


class SegmentDirection(StrEnum):
    VP1 = "vp1"
    VP2 = "vp2"


class ReferencePointMode(StrEnum):
    BOX3D_FRONT = "box3d_front"
    BBOX_BOTTOM = "bbox_bottom"


# Class label for vehicles without a wireframe model
OTHER_CLASS: str = "other"

# Interchange file version tags
CALIBRATION_VERSION: str = "autocalib-calibration/1"
SCENE_VERSION: str = "autocalib-scene/1"
TRUTH_VERSION: str = "autocalib-truth/1"
TRAJECTORIES_VERSION: str = "autocalib-trajectories/1"
DETECTIONS_VERSION: str = "autocalib-detections/1"
TRACKS_VERSION: str = "autocalib-tracks/1"
EDGELETS_VERSION: str = "autocalib-edgelets/1"
MARKINGS_VERSION: str = "autocalib-markings/1"
WIREFRAME_VERSION: str = "autocalib-wireframe/1"
REGRESSION_VERSION: str = "autocalib-regression/1"
REPORT_VERSION: str = "autocalib-report/1"

# Bundle layout
SCENE_FILE: str = "scene.json"
TRUTH_FILE: str = "scene_truth.json"
TRAJECTORIES_FILE: str = "trajectories.jsonl"
DETECTIONS_FILE: str = "detections.jsonl"
MARKINGS_FILE: str = "markings.json"
EDGELETS_FILE: str = "edgelets.jsonl"
TRACKS_FILE: str = "tracks.jsonl"
CALIBRATION_FILE: str = "calibration.json"
DIAGNOSTICS_FILE: str = "diagnostics.json"
SPEEDS_FILE: str = "speeds.csv"
REPORT_FILE: str = "report.json"
FRAMES_DIR: str = "frames"
MASKS_DIR: str = "masks"

# Exit codes
EXIT_OK: int = 0
EXIT_CONFIG: int = 2
EXIT_INSUFFICIENT_DATA: int = 3
EXIT_INFEASIBLE: int = 4
EXIT_EMPTY_EVALUATION: int = 5

# Camera geometry tolerances
DEGENERATE_VP_DISTANCE: float = 1e-6
HORIZON_EPSILON: float = 1e-9

# Diamond space
DIAMOND_RESOLUTION: int = 421
CASCADE_WINDOW_CELLS: int = 6  # coarse cells on each side of the coarse maximum
CASCADE_REFINEMENT: int = 4
LOW_CONFIDENCE_SCORE_RATIO: float = 2.0

# Edgelets
EDGELET_PATCH_RADIUS: int = 4  # 9x9 neighborhood
SEED_THRESHOLD_FRACTION: float = 0.1
KEEP_FRACTION: float = 0.25
VP1_EXCLUSION_DEG: float = 15.0
DEGENERATE_PATCH_ENERGY: float = 1e-12
MIN_IMAGE_SIZE: int = 16

# Vanishing point estimation
MIN_SEGMENTS: int = 50
MIN_EDGELETS: int = 200
MIN_DISPLACEMENT_PX: float = 2.0
EDGELET_WEIGHT_CAP: float = 50.0
MAX_HORIZON_INCLINATION_DEG: float = 45.0

# Tracking
OCCLUSION_IOU: float = 0.25
MEASUREMENT_SIGMA_PX: float = 1.0
PROCESS_SIGMA_PX: float = 0.5  # acceleration, px / frame^2
GATE_SIGMAS: float = 3.0
GATE_MIN_BOX_FRACTION: float = 0.25
MAX_MISSED_FRAMES: int = 5
MIN_TRACK_DETECTIONS: int = 5
HULL_BBOX_TOLERANCE_PX: float = 8.0
MATCH_TIME_TOLERANCE_S: float = 0.2

# Scale inference
IOU_THRESHOLD: float = 0.85
SCALE_GRID_SIZE: int = 60
SCALE_GRID_SPAN: float = 0.5  # +-50 % around the prior
KDE_GRID_SIZE: int = 1024

# Speed measurement
TAU: int = 5
MS_TO_KMH: float = 3.6

# Manual calibration
MANUAL_GRID_SPACING_PX: float = 2.0
MANUAL_FOCAL_RANGE: tuple[float, float] = (0.3, 10.0)  # x image width

# Evaluation
HISTOGRAM_BIN_KMH: float = 0.1
P99_QUANTILE: float = 0.99
