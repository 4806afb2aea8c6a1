"""Dental landmark detection on intraoral point clouds.

Heatmap regression with a presence-conditioned output head: a point-wise
encoder regresses one heatmap per landmark over the cloud (plus a null
point standing in for absent teeth), a classification head predicts which
teeth are present, and the conditioning step rescales each tooth's heatmap
columns by its presence probability before decoding landmark positions.
"""

from .dental import DentalAnnotation, classify_dentition
from .errors import (
    CharnetError,
    ChecksumError,
    FormatError,
    InputError,
    NumericError,
    VersionError,
)
from .estimator import CharNetLandmarkDetector
from .evaluation import aggregate, benchmark_inference, evaluate_model
from .heatmaps import SIGMA_MM, char_condition, decode_landmarks, gt_heatmaps
from .io import (
    load_annotation,
    load_checkpoint,
    load_pointcloud,
    save_annotation,
    save_checkpoint,
    save_pointcloud,
)
from .network import ArchDescriptor, charnet_forward, init_params, predict_landmarks
from .pointcloud import PointCloud, preprocess
from .synthetic import ArchSpec, generate_arch, generate_dataset
from .training import TrainConfig, make_training_sample, split_dataset, train

__version__ = "0.1.0"

__all__ = [
    "ArchDescriptor",
    "ArchSpec",
    "CharNetLandmarkDetector",
    "CharnetError",
    "ChecksumError",
    "DentalAnnotation",
    "FormatError",
    "InputError",
    "NumericError",
    "PointCloud",
    "SIGMA_MM",
    "TrainConfig",
    "VersionError",
    "__version__",
    "aggregate",
    "benchmark_inference",
    "char_condition",
    "charnet_forward",
    "classify_dentition",
    "decode_landmarks",
    "evaluate_model",
    "generate_arch",
    "generate_dataset",
    "gt_heatmaps",
    "init_params",
    "load_annotation",
    "load_checkpoint",
    "load_pointcloud",
    "make_training_sample",
    "predict_landmarks",
    "preprocess",
    "save_annotation",
    "save_checkpoint",
    "save_pointcloud",
    "split_dataset",
    "train",
]
