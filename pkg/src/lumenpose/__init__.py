"""Relative camera pose regression inside synthetic airway anatomies."""
from .airway import AirwayTree, ConfigError, LobeLabel, NavigationPath, PatientSpec, generate_patient
from .metrics import LossCombo, MetricKind
from .pose import DeltaPose, EulerAngles, Pose, Position

__version__ = "0.1.0"

__all__ = [
    "AirwayTree", "ConfigError", "LobeLabel", "NavigationPath", "PatientSpec", "generate_patient",
    "LossCombo", "MetricKind", "DeltaPose", "EulerAngles", "Pose", "Position",
]
