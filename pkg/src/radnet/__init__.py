"""radnet: a numpy CNN classifier for chest radiographs with Grad-CAM explanations."""
from .data import DatasetManifest, Record, load_image, make_batches, parse_manifest, patient_split
from .gradcam import Heatmap, ZoneGrade, gradcam, overlay, zone_grade
from .layers import gradient_check
from .metrics import ConfusionMatrix, EvalReport, accuracy, confusion, per_class_metrics
from .model import Model, ModelSpec, build, load, save
from .optim import Adam, BestTracker, ReduceLROnPlateau, TrainingLog, train_loop

__version__ = "0.1.0"

__all__ = [
    "Adam", "BestTracker", "ConfusionMatrix", "DatasetManifest", "EvalReport", "Heatmap",
    "Model", "ModelSpec", "Record", "ReduceLROnPlateau", "TrainingLog", "ZoneGrade",
    "accuracy", "build", "confusion", "gradcam", "gradient_check", "load", "load_image",
    "make_batches", "overlay", "parse_manifest", "patient_split", "per_class_metrics",
    "save", "train_loop", "zone_grade",
]
