"""Covariance propagation for planning and filters for online execution.

Each landmark carries its own filter; cross-landmark correlation is
dropped. Offline covariance updates linearize the range model at the
landmark mean, which makes them independent of the measurement values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .geometry import Workspace
from .semantic_map import Landmark, LinearDynamics, SemanticMap

logger = logging.getLogger(__name__)


@dataclass
class Diagnostics:
    """Collects non-fatal events (skipped robots, rejected measurements)."""

    events: list = field(default_factory=list)

    def record(self, kind: str, **info) -> None:
        self.events.append((kind, info))
        logger.debug("%s %s", kind, info)

    def count(self, kind: str) -> int:
        return sum(1 for k, _ in self.events if k == kind)


def _wrap(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


@dataclass(frozen=True)
class RangeSensorModel:
    """Range-only sensor with distance-proportional noise ``sigma = slope * l``."""

    range: float
    fov: float = 2.0 * math.pi  # radians, centered on the heading
    slope: float = 0.5
    line_of_sight: bool = False

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("sensor range must be positive")
        if not self.slope > 0:
            raise ValueError("noise slope must be positive")
        if not self.fov > 0:
            raise ValueError("field of view must be positive")

    def visible(self, pose, target, workspace: Workspace | None = None) -> bool:
        dx, dy = target[0] - pose[0], target[1] - pose[1]
        dist = math.hypot(dx, dy)
        if dist > self.range:
            return False
        if self.fov < 2.0 * math.pi and dist > 0.0:
            if abs(_wrap(math.atan2(dy, dx) - pose[2])) > 0.5 * self.fov:
                return False
        if self.line_of_sight and workspace is not None:
            return workspace.line_of_sight(pose[:2], target)
        return True

    def noise_var(self, dist: float) -> float:
        return (self.slope * dist) ** 2

    def linearize(self, pose, lmk_mean, workspace=None, diagnostics: Diagnostics | None = None):
        """``(H, R)`` at the landmark mean, or None when the landmark is not seen."""
        if not self.visible(pose, lmk_mean, workspace):
            return None
        diff = np.asarray(lmk_mean, dtype=float) - np.asarray(pose[:2], dtype=float)
        dist = float(np.hypot(*diff))
        if dist == 0.0:
            if diagnostics is not None:
                diagnostics.record("robot_at_landmark", pose=tuple(map(float, pose)))
            return None
        return (diff / dist).reshape(1, 2), np.array([[self.noise_var(dist)]])

    def to_dict(self) -> dict:
        return {"type": "range", "range": self.range, "fov_deg": math.degrees(self.fov),
                "slope": self.slope, "line_of_sight": self.line_of_sight}


@dataclass(frozen=True)
class LinearSensorModel:
    """``y = M(p) x + v`` with ``v ~ N(0, R(p))``; ``M`` returning None means no reading."""

    M: Callable
    R: Callable

    def linearize(self, pose, lmk_mean=None, workspace=None, diagnostics=None):
        H = self.M(pose)
        if H is None:
            return None
        H = np.atleast_2d(np.asarray(H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R(pose), dtype=float))
        if np.linalg.eigvalsh(0.5 * (R + R.T))[0] < -1e-12:
            raise ValueError("measurement noise covariance must be PSD")
        return H, R


def _joseph(cov: np.ndarray, H: np.ndarray, R: np.ndarray):
    S = H @ cov @ H.T + R
    K = np.linalg.solve(S.T, (cov @ H.T).T).T
    I_KH = np.eye(2) - K @ H
    new = I_KH @ cov @ I_KH.T + K @ R @ K.T
    return 0.5 * (new + new.T), K


def riccati_update(cov, poses, lmk_mean, sensors: Sequence, workspace: Workspace | None = None,
                   diagnostics: Diagnostics | None = None) -> np.ndarray:
    """Fused one-step covariance update from every robot that sees the landmark.

    Equivalent to ``(cov^-1 + sum_j H_j^T R_j^-1 H_j)^-1`` but stays valid
    for singular ``cov``. Robots that see nothing leave ``cov`` unchanged.
    """
    cov = np.asarray(cov, dtype=float)
    blocks = []
    for pose, sensor in zip(poses, sensors):
        lin = sensor.linearize(pose, lmk_mean, workspace, diagnostics)
        if lin is not None:
            blocks.append(lin)
    if not blocks:
        return cov
    H = np.vstack([h for h, _ in blocks])
    R = np.zeros((H.shape[0], H.shape[0]))
    k = 0
    for h, r in blocks:
        n = h.shape[0]
        R[k:k + n, k:k + n] = r
        k += n
    new, _ = _joseph(cov, H, R)
    return new


def riccati_update_map(covs: np.ndarray, poses, means: np.ndarray, sensors: Sequence,
                       workspace: Workspace | None = None,
                       diagnostics: Diagnostics | None = None) -> np.ndarray:
    """Apply :func:`riccati_update` to every landmark independently."""
    out = np.array(covs, dtype=float, copy=True)
    for i in range(len(out)):
        out[i] = riccati_update(out[i], poses, means[i], sensors, workspace, diagnostics)
    return out


def predict(lmk: Landmark | LinearDynamics | None, mean, cov, t: int):
    """One prediction step ``t -> t+1``; static landmarks are returned unchanged."""
    dyn = lmk.dynamics if isinstance(lmk, Landmark) else lmk
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if dyn is None:
        return mean, cov
    new_mean = dyn.A @ mean + dyn.B @ dyn.control(t)
    new_cov = dyn.A @ cov @ dyn.A.T + dyn.Q
    return new_mean, 0.5 * (new_cov + new_cov.T)


def predict_map(smap: SemanticMap) -> SemanticMap:
    """Advance every landmark of a snapshot by one time step."""
    if all(d is None for d in smap.dynamics):
        return smap.replace(t=smap.t + 1)
    means = smap.means.copy()
    covs = smap.covs.copy()
    for i, dyn in enumerate(smap.dynamics):
        means[i], covs[i] = predict(dyn, means[i], covs[i], smap.t)
    return smap.replace(means=means, covs=covs, t=smap.t + 1)


def ekf_update(smap: SemanticMap, measurements: Sequence, poses, sensors: Sequence,
               diagnostics: Diagnostics | None = None) -> SemanticMap:
    """Sequential per-measurement EKF update of landmark means and covariances.

    ``measurements`` holds ``(robot, landmark_id, range)`` tuples with
    1-based robot indices. The range model is linearized at the current
    mean and the noise variance uses the predicted range.
    """
    if not measurements:
        return smap
    means = smap.means.copy()
    covs = smap.covs.copy()
    for robot, lid, value in measurements:
        if not math.isfinite(value):
            if diagnostics is not None:
                diagnostics.record("non_finite_measurement", robot=robot, landmark=lid)
            continue
        i = smap.index(lid)
        pose = np.asarray(poses[robot - 1], dtype=float)
        diff = means[i] - pose[:2]
        pred = float(np.hypot(*diff))
        if pred == 0.0:
            if diagnostics is not None:
                diagnostics.record("robot_at_landmark", robot=robot, landmark=lid)
            continue
        H = (diff / pred).reshape(1, 2)
        R = np.array([[sensors[robot - 1].noise_var(pred)]])
        covs[i], K = _joseph(covs[i], H, R)
        means[i] = means[i] + (K * (value - pred)).ravel()
    return smap.replace(means=means, covs=covs)


def class_update(dist, observed, confusion, classes: Sequence[str] | None = None,
                 diagnostics: Diagnostics | None = None):
    """Bayes update of a class distribution from one detector output.

    ``observed`` is ``(label, score)``; ``confusion[c][label]`` is the
    likelihood of reporting ``label`` when the true class is ``c``. The
    score is carried for logging only. Works on dicts or dense arrays.
    """
    label_ = observed[0] if isinstance(observed, tuple) else observed
    if isinstance(dist, Mapping):
        classes = list(dist)
        prior = np.array([dist[c] for c in classes], dtype=float)
    else:
        prior = np.asarray(dist, dtype=float)
        if classes is None:
            raise ValueError("dense distributions need the class order")
    if isinstance(confusion, Mapping):
        lik = np.array([confusion[c][label_] for c in classes], dtype=float)
    else:
        lik = np.asarray(confusion, dtype=float)[:, list(classes).index(label_)]
    post = lik * prior
    total = post.sum()
    if not total > 0:
        if diagnostics is not None:
            diagnostics.record("zero_class_likelihood", label=label_)
        return dist
    post = post / total
    if isinstance(dist, Mapping):
        return dict(zip(classes, post.tolist()))
    return post
