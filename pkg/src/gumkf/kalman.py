"""Linear Kalman filter and the analytic uncertainty propagation it equals.

The correction covariance is computed in Joseph form, which is algebraically
equal to (I - K C) P at the optimal gain but remains PSD under rounding.  The
innovation covariance is handled through a symmetric positive-definite solve,
never an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    DimensionError,
    GaussianBelief,
    LinearModel,
    NumericError,
    require_psd,
    symmetrize,
)


@dataclass(frozen=True)
class KalmanStep:
    """One prediction/correction cycle: predicted belief, gain, corrected
    belief and the measurement innovation."""

    predicted: GaussianBelief
    gain: np.ndarray
    corrected: GaussianBelief
    innovation: np.ndarray


def kf_predict(
    prev: GaussianBelief, model: LinearModel, theta=None, k: int = 0
) -> GaussianBelief:
    """Prediction step: mean F x, covariance F P F' + Q."""
    F = model.F(k, theta)
    Q = model.Q(k)
    n = prev.dim
    if F.shape != (n, n):
        raise DimensionError(f"state matrix shape {F.shape} != ({n}, {n})")
    if Q.shape != (n, n):
        raise DimensionError(f"process noise shape {Q.shape} != ({n}, {n})")
    mean = F @ prev.mean
    cov = symmetrize(F @ prev.cov @ F.T + Q)
    require_psd(cov, 1e-10, f"kf_predict at k={k}")
    return GaussianBelief(mean, cov)


def kf_gain(predicted_cov: np.ndarray, C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Kalman gain K = P C' (C P C' + R)^-1 via a symmetric-PD solve."""
    P = np.asarray(predicted_cov, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if C.shape[1] != P.shape[0] or R.shape != (C.shape[0], C.shape[0]):
        raise DimensionError("kf_gain: inconsistent P/C/R shapes")
    S = symmetrize(C @ P @ C.T + R)
    try:
        # K' = S^-1 C P, using symmetry of P and S
        return scipy.linalg.solve(S, C @ P, assume_a="pos").T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(f"singular innovation covariance: {exc}") from exc


def joseph_update(
    predicted_cov: np.ndarray, gain: np.ndarray, obs_matrix: np.ndarray, R: np.ndarray
) -> np.ndarray:
    """Joseph-form covariance (I-KC) P (I-KC)' + K R K', symmetrized."""
    P = np.asarray(predicted_cov, dtype=float)
    K = np.asarray(gain, dtype=float)
    C = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    A = np.eye(P.shape[0]) - K @ C
    return symmetrize(A @ P @ A.T + K @ R @ K.T)


def kf_correct(
    predicted: GaussianBelief,
    y: np.ndarray,
    model: LinearModel,
    theta=None,
    k: int = 0,
) -> KalmanStep:
    """Correction step: mean shifted by gain times innovation, Joseph-form
    covariance."""
    C = np.atleast_2d(model.C(k, theta))
    R = np.atleast_2d(model.R(k))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if C.shape != (y.shape[0], predicted.dim):
        raise DimensionError(
            f"obs matrix shape {C.shape} != ({y.shape[0]}, {predicted.dim})"
        )
    try:
        K = kf_gain(predicted.cov, C, R)
    except NumericError as exc:
        raise NumericError(f"{exc} at time index {k}") from exc
    innovation = y - C @ predicted.mean
    mean = predicted.mean + K @ innovation
    cov = joseph_update(predicted.cov, K, C, R)
    require_psd(cov, 1e-10, f"kf_correct at k={k}")
    return KalmanStep(predicted, K, GaussianBelief(mean, cov), innovation)


def propagate_linear_gum(
    prev: GaussianBelief,
    y: GaussianBelief,
    model: LinearModel,
    theta=None,
    k: int = 0,
) -> GaussianBelief:
    """Analytic propagation of the joint normal state-of-knowledge PDF through
    the linear estimation equation.

    The inputs (previous state and measurement) must be independent.  The
    result coincides with kf_predict followed by kf_correct when y.cov equals
    the model's measurement noise covariance.
    """
    F = model.F(k, theta)
    Q = model.Q(k)
    C = np.atleast_2d(model.C(k, theta))
    R = y.cov
    P_pred = symmetrize(F @ prev.cov @ F.T + Q)
    try:
        K = kf_gain(P_pred, C, R)
    except NumericError as exc:
        raise NumericError(f"{exc} at time index {k}") from exc
    A = np.eye(prev.dim) - K @ C
    mean = A @ (F @ prev.mean) + K @ y.mean
    cov = symmetrize(A @ P_pred @ A.T + K @ R @ K.T)
    require_psd(cov, 1e-10, f"propagate_linear_gum at k={k}")
    return GaussianBelief(mean, cov)
