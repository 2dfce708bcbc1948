"""Loss values and gradient kernels for the three comparison models.

All losses are averaged over records and accept per-record confidence
weights. The GLM forms (Bradley-Terry, Thurstone-Mosteller) are evaluated
through stable log-CDF / hazard formulations so that gradients stay accurate
for predictor magnitudes far beyond +-30; nothing is clipped.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.special import expit, log_ndtr

from .data import ComparisonDataset, ModelState, design_adjoint, predict_linear
from .errors import ConfigError, DimensionMismatch, NonBinaryOutcomeForGLM

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class LossFamily(Enum):
    LINEAR = "linear"
    BRADLEY_TERRY = "bt"
    THURSTONE_MOSTELLER = "tm"

    @classmethod
    def parse(cls, token) -> "LossFamily":
        if isinstance(token, cls):
            return token
        for member in cls:
            if member.value == token:
                return member
        raise ConfigError(f"unknown loss family {token!r}")

    @property
    def is_glm(self) -> bool:
        return self is not LossFamily.LINEAR


def require_binary(family: LossFamily, dataset: ComparisonDataset):
    if LossFamily.parse(family).is_glm and not dataset.is_binary:
        raise NonBinaryOutcomeForGLM(
            f"{family.value} loss requires outcomes in {{+1, -1}}"
        )


def log_cdf(family: LossFamily, t: np.ndarray) -> np.ndarray:
    """log Psi(t) for the GLM link: logistic (bt) or standard normal (tm)."""
    family = LossFamily.parse(family)
    t = np.asarray(t, dtype=np.float64)
    if family is LossFamily.BRADLEY_TERRY:
        return -np.logaddexp(0.0, -t)
    if family is LossFamily.THURSTONE_MOSTELLER:
        return log_ndtr(t)
    raise ConfigError("linear loss has no CDF link")


def hazard(family: LossFamily, t: np.ndarray) -> np.ndarray:
    """psi(t) / Psi(t), the negative slope of -log Psi.

    Bradley-Terry simplifies to the logistic survival function Psi(-t); the
    normal hazard is evaluated as exp(log pdf - log cdf), which stays finite
    and accurate in the deep left tail (it grows like -t there).
    """
    family = LossFamily.parse(family)
    t = np.asarray(t, dtype=np.float64)
    if family is LossFamily.BRADLEY_TERRY:
        return expit(-t)
    if family is LossFamily.THURSTONE_MOSTELLER:
        log_pdf = -0.5 * t * t - _LOG_SQRT_2PI
        return np.exp(log_pdf - log_ndtr(t))
    raise ConfigError("linear loss has no hazard")


def loss_value(family: LossFamily, dataset: ComparisonDataset, pred: np.ndarray) -> float:
    """Weighted mean loss of the predictor vector `pred`.

    Linear: (1/2m) sum w (y - pred)^2; GLM: -(1/m) sum w log Psi(y * pred).
    """
    family = LossFamily.parse(family)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape[0] != dataset.m:
        raise DimensionMismatch(f"pred length {pred.shape[0]} != m = {dataset.m}")
    if family is LossFamily.LINEAR:
        r = dataset.y - pred
        return float(np.sum(dataset.w * r * r) / (2.0 * dataset.m))
    require_binary(family, dataset)
    return float(-np.sum(dataset.w * log_cdf(family, dataset.y * pred)) / dataset.m)


def gradient_residual(
    family: LossFamily, dataset: ComparisonDataset, pred: np.ndarray
) -> np.ndarray:
    """Per-record residual g with nabla L = (1/m) X^T (w * g).

    Linear: g = pred - y. GLM: g = -y * hazard(y * pred), which always pushes
    the predictor toward the observed outcome and decays as the fit improves.
    """
    family = LossFamily.parse(family)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape[0] != dataset.m:
        raise DimensionMismatch(f"pred length {pred.shape[0]} != m = {dataset.m}")
    if family is LossFamily.LINEAR:
        return pred - dataset.y
    require_binary(family, dataset)
    return -dataset.y * hazard(family, dataset.y * pred)


def loss_gradients(
    family: LossFamily, dataset: ComparisonDataset, state: ModelState
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(nabla_eta, nabla_xi, nabla_gamma) of the weighted mean loss at `state`."""
    pred = predict_linear(state, dataset)
    g = gradient_residual(family, dataset, pred)
    return design_adjoint(dataset, dataset.w * g / dataset.m)


def curvature_bound(family: LossFamily) -> float:
    """Upper bound on the second derivative of the per-record loss in pred."""
    family = LossFamily.parse(family)
    if family is LossFamily.LINEAR:
        return 1.0
    if family is LossFamily.BRADLEY_TERRY:
        return 0.25
    return 1.0  # normal hazard has derivative in (0, 1)
