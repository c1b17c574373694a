"""Road grade estimation from smartphone IMU and vehicle-speed traces.

Gyroscope pitch is integrated per road segment and its drift is removed
against accelerometer anchor snapshots taken during stable driving. The
anchors' constant bias is measured against coarse elevation data where
its shape matches, and many trips are combined with CRH truth discovery.
"""

from .aggregate import aggregate_anchors, aggregate_profiles, crh
from .metrics import ErrorReport, absolute_error, gradient_error
from .pipeline import PipelineConfig, PipelineResult, StageError, evaluate, run_pipeline, threshold_sweep
from .trace_model import (
    AnchorSnapshot,
    GradeProfile,
    RoadSegment,
    SensorTrace,
    SpeedSeries,
    SpeedSource,
    load_ground_truth,
    load_route,
    load_trace,
    save_trace,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorSnapshot",
    "ErrorReport",
    "GradeProfile",
    "PipelineConfig",
    "PipelineResult",
    "RoadSegment",
    "SensorTrace",
    "SpeedSeries",
    "SpeedSource",
    "StageError",
    "absolute_error",
    "aggregate_anchors",
    "aggregate_profiles",
    "crh",
    "evaluate",
    "gradient_error",
    "load_ground_truth",
    "load_route",
    "load_trace",
    "run_pipeline",
    "save_trace",
    "threshold_sweep",
]
