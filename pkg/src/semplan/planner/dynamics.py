"""Unicycle motion primitives for teams of robots."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..geometry import Workspace

SMALL_TURN = 1e-3  # below this |tau * omega| the midpoint form is used


def wrap_angle(theta):
    """Normalize to (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), 2.0 * math.pi)


def _advance(x, y, th, u, w, s):
    """Pose after moving for time ``s`` (arrays broadcast)."""
    small = np.abs(s * w) < SMALL_TURN
    w_safe = np.where(small, 1.0, w)
    mid = th + 0.5 * w * s
    x_small = x + u * s * np.cos(mid)
    y_small = y + u * s * np.sin(mid)
    x_arc = x + (u / w_safe) * (np.sin(th + w * s) - np.sin(th))
    y_arc = y + (u / w_safe) * (np.cos(th) - np.cos(th + w * s))
    return np.where(small, x_small, x_arc), np.where(small, y_small, y_arc), th + w * s


def dynamics_step(poses, controls, tau: float, workspace: Workspace | None = None,
                  check_step: float | None = None):
    """Integrate every robot for one step of length ``tau``.

    ``poses`` is (N, 3) and ``controls`` is (N, 2) holding ``(u, omega)``.
    Returns ``(new_poses, valid)``; ``valid`` is False when some robot's
    path leaves the bounds or touches an obstacle. The path is sampled so
    consecutive checks are at most ``check_step`` apart (default: half the
    workspace's default grid resolution).
    """
    new, valid = dynamics_step_each(poses, controls, tau, workspace, check_step)
    return new, bool(valid.all())


def dynamics_step_each(poses, controls, tau: float, workspace: Workspace | None = None,
                       check_step: float | None = None):
    """Like :func:`dynamics_step` but with one validity flag per row."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    x, y, th = poses[:, 0], poses[:, 1], poses[:, 2]
    u, w = controls[:, 0], controls[:, 1]
    nx, ny, nth = _advance(x, y, th, u, w, tau)
    new = np.column_stack([nx, ny, wrap_angle(nth)])
    if workspace is None:
        return new, np.ones(len(new), dtype=bool)
    if check_step is None:
        check_step = workspace.default_resolution() * 0.5
    length = float(np.max(np.abs(u))) * tau
    n = max(1, int(math.ceil(length / check_step)))
    s = tau * np.arange(1, n + 1) / n
    px, py, _ = _advance(x[:, None], y[:, None], th[:, None], u[:, None], w[:, None], s[None, :])
    pts = np.column_stack([px.ravel(), py.ravel()])
    hit = workspace.collides(pts).reshape(len(new), n)
    return new, ~hit.any(axis=1)


def step_cost(before, after) -> float:
    """Summed Euclidean displacement of all robots."""
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    return float(np.sum(np.hypot(after[:, 0] - before[:, 0], after[:, 1] - before[:, 1])))


def primitive_product(speeds: Sequence[float], turn_rates: Sequence[float]) -> list[tuple[float, float]]:
    """All ``(u, omega)`` pairs, speeds outermost, in the order given."""
    return [(float(u), float(w)) for u in speeds for w in turn_rates]


DEFAULT_SPEEDS = (1.0, 0.0)
# in-place turns precede standing still so ties in the greedy choice rotate the robot
DEFAULT_TURN_RATES_DEG = (0.0, 30.0, -30.0, 90.0, -90.0, 180.0, -180.0)


def default_primitives() -> list[tuple[float, float]]:
    prims = primitive_product(DEFAULT_SPEEDS, [math.radians(w) for w in DEFAULT_TURN_RATES_DEG])
    # move (0, 0) to the end
    prims.remove((0.0, 0.0))
    prims.append((0.0, 0.0))
    return prims
