"""Scikit-learn style wrapper around the training loop and decoder.

The estimator follows the sklearn contract: the constructor stores
hyperparameters verbatim, fit() learns state into trailing-underscore
attributes and returns self, and get_params/set_params/clone work out of
the box. X is a sequence of point clouds (PointCloud or (N, 3) arrays)
rather than a feature matrix, so the generic sklearn estimator checks do
not apply; y is the matching sequence of annotations.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dental import translate_annotation
from .errors import InputError
from .evaluation import aggregate, evaluate_model
from .heatmaps import SIGMA_MM
from .network import ArchDescriptor, predict_landmarks
from .pointcloud import PointCloud, preprocess
from .training import TrainConfig, make_training_sample, train

__all__ = ["CharNetLandmarkDetector"]


class CharNetLandmarkDetector(BaseEstimator):
    """Two-head landmark detector with presence-conditioned decoding.

    With baseline=True the loss is the heatmap term alone and predictions
    decode the raw heatmaps, which reproduces the unconditioned reference
    model (the presence head exists but receives no gradient).
    """

    def __init__(
        self,
        epochs: int = 100,
        batch_size: int = 16,
        lr0: float = 0.005,
        weight_decay: float = 0.003,
        dropout: float = 0.5,
        lambda_reg: float = 0.001,
        lambda_cls: float = 1.0,
        sigma: float = SIGMA_MM,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        seed: int = 0,
        descriptor: ArchDescriptor | None = None,
        baseline: bool = False,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.lambda_reg = lambda_reg
        self.lambda_cls = lambda_cls
        self.sigma = sigma
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed
        self.descriptor = descriptor
        self.baseline = baseline

    def _config(self) -> TrainConfig:
        """Validates every hyperparameter as a side effect."""
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            weight_decay=self.weight_decay,
            dropout=self.dropout,
            lambda_reg=self.lambda_reg,
            lambda_cls=self.lambda_cls,
            sigma=self.sigma,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            seed=self.seed,
            descriptor=self.descriptor if self.descriptor is not None else ArchDescriptor(),
            baseline=self.baseline,
        )

    @staticmethod
    def _as_model_cloud(cloud, descriptor: ArchDescriptor):
        """Coerce one X entry to a preprocessed cloud of descriptor size.

        Returns the cloud plus the offset mapping model-frame coordinates
        back to the entry's own frame (zero unless this call centered it).
        """
        if not isinstance(cloud, PointCloud):
            cloud = PointCloud(np.asarray(cloud, dtype=np.float64))
        if cloud.has_null:
            if len(cloud) != descriptor.num_points:
                raise InputError(
                    f"preprocessed cloud has {len(cloud)} points, "
                    f"model expects {descriptor.num_points}"
                )
            return cloud, np.zeros(3)
        if len(cloud) == descriptor.num_points:
            # sized like a preprocessed cloud: the last row must be the null
            return PointCloud(cloud.points, has_null=True), np.zeros(3)
        return preprocess(cloud, n=descriptor.num_points - 1), cloud.points.mean(axis=0)

    def fit(self, X, y) -> "CharNetLandmarkDetector":
        config = self._config()
        X, y = list(X), list(y)
        if len(X) != len(y):
            raise InputError(f"X and y disagree on sample count: {len(X)} vs {len(y)}")
        samples = []
        for cloud, ann in zip(X, y):
            pc, offset = self._as_model_cloud(cloud, config.descriptor)
            # keep the landmarks in the same frame as the centered cloud
            samples.append(
                make_training_sample(pc, translate_annotation(ann, -offset), sigma=config.sigma)
            )
        result = train(samples, config)
        self.params_ = result.params
        self.history_ = result.history
        self.config_ = config
        return self

    def predict(self, X) -> np.ndarray:
        """Landmark positions, shape (n_samples, num_landmarks, 3)."""
        check_is_fitted(self, "params_")
        return np.stack([self._predict_one(cloud)[0] for cloud in X])

    def predict_full(self, X) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per sample: (positions, in_mesh flags, tooth presence probs)."""
        check_is_fitted(self, "params_")
        return [self._predict_one(cloud) for cloud in X]

    def _predict_one(self, cloud):
        pc, offset = self._as_model_cloud(cloud, self.params_.descriptor)
        positions, in_mesh, presence = predict_landmarks(
            pc, self.params_, condition=not self.baseline
        )
        return positions + offset, in_mesh, presence

    def score(self, X, y) -> float:
        """Micro-averaged landmark-level F1 against annotations y."""
        check_is_fitted(self, "params_")
        X, y = list(X), list(y)
        if len(X) != len(y):
            raise InputError(f"X and y disagree on sample count: {len(X)} vs {len(y)}")
        evaluations = []
        for cloud, ann in zip(X, y):
            positions, in_mesh, _ = self._predict_one(cloud)
            evaluations.append(evaluate_model(positions, in_mesh, ann))
        return aggregate(evaluations).micro_f1
