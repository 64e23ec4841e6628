"""Kalman filter recursions for the linear plant.

Prediction:  xbar_{t+1|t} = A xbar_{t|t} + B u_t,
             P_{t+1|t}    = A P_{t|t} A^T + Q.
Update:      S = H P_{t+1|t} H^T + R,   K = P_{t+1|t} H^T S^{-1},
             xbar_{t+1|t+1} = xbar_{t+1|t} + K (z - H xbar_{t+1|t}),
             P_{t+1|t+1}    = (I - K H) P_{t+1|t}.

The gain K minimizes the posterior error covariance; the test suite checks
this against the Joseph-form covariance under random gain perturbations.
Covariances are symmetrized and eigenvalue-clipped after every update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import linalg
from .model import BeliefState, SystemModel


@dataclass(frozen=True)
class PredictedBelief:
    """One-step-ahead mean and covariance, before the measurement update."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", linalg.clip_psd(np.atleast_2d(np.asarray(self.cov, dtype=float))))


@dataclass(frozen=True)
class Measurement:
    z: np.ndarray
    time_index: int

    def __post_init__(self):
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))


def predict(belief: BeliefState, model: SystemModel, u: np.ndarray) -> PredictedBelief:
    """Propagate the belief through the dynamics with input u."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if belief.mean.shape[0] != model.n:
        raise ValueError(f"belief has dimension {belief.mean.shape[0]}, model expects {model.n}")
    if u.shape[0] != model.m:
        raise ValueError(f"u has length {u.shape[0]}, expected {model.m}")
    mean = model.A @ belief.mean + model.B @ u
    cov = linalg.symmetrize(model.A @ belief.cov @ model.A.T + model.Q)
    return PredictedBelief(mean=mean, cov=cov)


def gain(pred: PredictedBelief, model: SystemModel) -> np.ndarray:
    """Optimal gain K = P H^T S^{-1} with S = H P H^T + R, via Cholesky.

    When P H^T vanishes the gain is zero for any invertible S, so that limit
    is returned even if S itself is singular (noise-free degenerate plants).
    """
    if pred.cov.shape[0] != model.n:
        raise ValueError(f"prediction has dimension {pred.cov.shape[0]}, model expects {model.n}")
    cross = pred.cov @ model.H.T  # n x n_y
    s = linalg.symmetrize(model.H @ pred.cov @ model.H.T + model.R)
    try:
        factor = cho_factor(s, lower=True)
    except (LinAlgError, np.linalg.LinAlgError) as exc:
        if np.all(cross == 0.0):
            return np.zeros((model.n, model.n_y))
        raise np.linalg.LinAlgError(
            "innovation covariance S is singular; R must be positive definite") from exc
    return cho_solve(factor, cross.T).T


def update(pred: PredictedBelief, K: np.ndarray, z: Measurement,
           model: SystemModel) -> BeliefState:
    """Fold the measurement into the prediction with the supplied gain."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if z.z.shape[0] != model.n_y:
        raise ValueError(f"measurement has length {z.z.shape[0]}, expected {model.n_y}")
    if K.shape != (model.n, model.n_y):
        raise ValueError(f"K must be {model.n}x{model.n_y}, got {K.shape}")
    innovation = z.z - model.H @ pred.mean
    mean = pred.mean + K @ innovation
    cov = (np.eye(model.n) - K @ model.H) @ pred.cov
    # BeliefState construction symmetrizes and clips the covariance to PSD.
    return BeliefState(mean=mean, cov=cov, time_index=z.time_index)
