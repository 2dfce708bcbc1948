"""Sparsity penalties on the per-user blocks and their exact proximal maps.

Two modes: group-sparse (L1 on the biases, group-L2 on each user's deviation
vector) and entrywise-sparse (L1 on everything). The common coefficient is
never penalized. No group-size normalization factor is applied; the per-user
blocks all share one size, so the factor would only rescale the path time.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigError


class PenaltyMode(Enum):
    GROUP_SPARSE = "group"
    ENTRYWISE_SPARSE = "entrywise"

    @classmethod
    def parse(cls, token) -> "PenaltyMode":
        if isinstance(token, cls):
            return token
        for member in cls:
            if member.value == token:
                return member
        raise ConfigError(f"unknown penalty mode {token!r}")


def resolve_mode(requested, features_mode: str) -> PenaltyMode:
    """Default and validate the penalty mode against the feature mode.

    Identity features force the group penalty (an entrywise penalty on
    identity coordinates would break whole-user sparsity); explicit features
    default to entrywise but accept either.
    """
    if requested is None:
        return (
            PenaltyMode.GROUP_SPARSE
            if features_mode == "identity"
            else PenaltyMode.ENTRYWISE_SPARSE
        )
    requested = PenaltyMode.parse(requested)
    if features_mode == "identity" and requested is not PenaltyMode.GROUP_SPARSE:
        raise ConfigError("identity features require the group-sparse penalty")
    return requested


def penalty_value(mode: PenaltyMode, xi: np.ndarray, gamma: np.ndarray) -> float:
    """P(beta) = sum_u |gamma_u| + sum_u ||xi_u|| (L2 group norm or L1)."""
    mode = PenaltyMode.parse(mode)
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    gamma_part = float(np.sum(np.abs(gamma)))
    if mode is PenaltyMode.GROUP_SPARSE:
        return gamma_part + float(np.sum(np.sqrt(np.sum(xi * xi, axis=1))))
    return gamma_part + float(np.sum(np.abs(xi)))


def shrink(
    mode: PenaltyMode, kappa: float, z_xi: np.ndarray, z_gamma: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """kappa times the proximal map of the penalty, applied blockwise.

    Group mode:      xi_u  = kappa * max(0, 1 - 1/||z_xi_u||) * z_xi_u
    Entrywise mode:  xi_uj = kappa * sign(z_uj) * max(0, |z_uj| - 1)
    Both modes:      gamma_u = kappa * max(0, 1 - 1/|z_gamma_u|) * z_gamma_u

    Blocks whose dual lies inside the unit ball map to exact zeros.
    """
    mode = PenaltyMode.parse(mode)
    if kappa <= 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    z_xi = np.atleast_2d(np.asarray(z_xi, dtype=np.float64))
    z_gamma = np.asarray(z_gamma, dtype=np.float64)
    if mode is PenaltyMode.GROUP_SPARSE:
        norms = np.sqrt(np.sum(z_xi * z_xi, axis=1))
        factor = np.where(norms > 1.0, kappa * (1.0 - 1.0 / np.where(norms > 0, norms, 1.0)), 0.0)
        xi = factor[:, None] * z_xi
    else:
        xi = kappa * np.sign(z_xi) * np.maximum(np.abs(z_xi) - 1.0, 0.0)
    gamma = kappa * np.sign(z_gamma) * np.maximum(np.abs(z_gamma) - 1.0, 0.0)
    return xi, gamma
