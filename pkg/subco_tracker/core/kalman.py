"""Constant-velocity Kalman filter in (cx, cy, aspect, height) measurement space.

Process and measurement noise standard deviations are proportional to the
box height, except for the aspect ratio which gets fixed values.
"""

import logging

import numpy as np
from scipy import linalg

from subco_tracker.core.schemas import BBox, KalmanState

logger = logging.getLogger(__name__)

NDIM = 4
MIN_HEIGHT = 1e-3


class KalmanFilter:

    def __init__(self, std_weight_position: float = 1.0 / 20, std_weight_velocity: float = 1.0 / 160,
                 std_aspect_position: float = 1e-2, std_aspect_velocity: float = 1e-5,
                 std_aspect_measurement: float = 1e-1, measurement_scale: float = 1.0):
        self._motion_mat = np.eye(2 * NDIM)
        for i in range(NDIM):
            self._motion_mat[i, NDIM + i] = 1.0
        self._update_mat = np.eye(NDIM, 2 * NDIM)
        self._std_weight_position = std_weight_position
        self._std_weight_velocity = std_weight_velocity
        self._std_aspect_position = std_aspect_position
        self._std_aspect_velocity = std_aspect_velocity
        self._std_aspect_measurement = std_aspect_measurement
        self._measurement_scale = measurement_scale

    def initiate(self, box: BBox) -> KalmanState:
        measurement = box.to_xyah()
        h = measurement[3]
        std = [2 * self._std_weight_position * h,
               2 * self._std_weight_position * h,
               self._std_aspect_position,
               2 * self._std_weight_position * h,
               10 * self._std_weight_velocity * h,
               10 * self._std_weight_velocity * h,
               self._std_aspect_velocity,
               10 * self._std_weight_velocity * h]
        mean = np.r_[measurement, np.zeros(NDIM)]
        # Floor keeps the initial covariance positive definite when the weights are zero.
        return KalmanState(mean=mean, covariance=np.diag(np.maximum(np.square(std), 1e-12)))

    def process_noise(self, mean: np.ndarray) -> np.ndarray:
        h = mean[3]
        std_pos = [self._std_weight_position * h, self._std_weight_position * h,
                   self._std_aspect_position, self._std_weight_position * h]
        std_vel = [self._std_weight_velocity * h, self._std_weight_velocity * h,
                   self._std_aspect_velocity, self._std_weight_velocity * h]
        return np.diag(np.square(np.r_[std_pos, std_vel]))

    def measurement_noise(self, mean: np.ndarray) -> np.ndarray:
        h = mean[3]
        std = [self._std_weight_position * h, self._std_weight_position * h,
               self._std_aspect_measurement, self._std_weight_position * h]
        return self._measurement_scale * np.diag(np.square(std))

    def predict(self, state: KalmanState) -> KalmanState:
        """x <- F x, P <- F P F^T + Q."""
        mean = self._motion_mat @ state.mean
        covariance = np.linalg.multi_dot((self._motion_mat, state.covariance, self._motion_mat.T))
        covariance = covariance + self.process_noise(state.mean)
        mean[3] = max(mean[3], MIN_HEIGHT)
        return KalmanState(mean=mean, covariance=0.5 * (covariance + covariance.T))

    def project(self, state: KalmanState):
        mean = self._update_mat @ state.mean
        covariance = np.linalg.multi_dot((self._update_mat, state.covariance, self._update_mat.T))
        return mean, covariance + self.measurement_noise(state.mean)

    def update(self, state: KalmanState, box: BBox) -> KalmanState:
        """Kalman correction with a measured box; the covariance uses the Joseph form."""
        projected_mean, projected_cov = self.project(state)
        try:
            chol_factor, lower = linalg.cho_factor(projected_cov, lower=True, check_finite=False)
        except linalg.LinAlgError as e:
            raise ValueError(f"Innovation covariance is not positive definite: {e}") from e
        kalman_gain = linalg.cho_solve((chol_factor, lower), (state.covariance @ self._update_mat.T).T,
                                       check_finite=False).T
        innovation = box.to_xyah() - projected_mean

        mean = state.mean + kalman_gain @ innovation
        identity_minus = np.eye(2 * NDIM) - kalman_gain @ self._update_mat
        covariance = (np.linalg.multi_dot((identity_minus, state.covariance, identity_minus.T))
                      + np.linalg.multi_dot((kalman_gain, self.measurement_noise(state.mean), kalman_gain.T)))
        mean[3] = max(mean[3], MIN_HEIGHT)
        return KalmanState(mean=mean, covariance=0.5 * (covariance + covariance.T))


_DEFAULT_FILTER = KalmanFilter()


def kalman_predict(state: KalmanState, kf: KalmanFilter = _DEFAULT_FILTER) -> KalmanState:
    return kf.predict(state)


def kalman_update(state: KalmanState, box: BBox, kf: KalmanFilter = _DEFAULT_FILTER) -> KalmanState:
    return kf.update(state, box)
