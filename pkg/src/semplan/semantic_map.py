"""Uncertain semantic maps, probabilistic predicates and the labeling function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .geometry import Workspace
from .ltl import formula as fm


class MapError(ValueError):
    pass


def check_psd(cov, what: str = "covariance", tol: float = 1e-10) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2) or not np.all(np.isfinite(cov)):
        raise MapError(f"{what} must be a finite 2x2 matrix")
    if abs(cov[0, 1] - cov[1, 0]) > tol * max(1.0, abs(cov).max()):
        raise MapError(f"{what} is not symmetric")
    lam = np.linalg.eigvalsh(cov)
    if lam[0] < -tol * max(1.0, abs(lam[-1])):
        raise MapError(f"{what} is not positive semidefinite (eigenvalues {lam.round(6).tolist()})")
    return cov


@dataclass(frozen=True)
class LinearDynamics:
    """``x(t+1) = A x(t) + B a(t) + w``, ``w ~ N(0, Q)``; the last control is held."""

    A: np.ndarray
    B: np.ndarray
    controls: tuple = ()
    Q: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float).reshape(2, 2)
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(2, -1) if B.size else np.zeros((2, 0))
        controls = tuple(np.asarray(a, dtype=float).reshape(B.shape[1]) for a in self.controls)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "Q", check_psd(self.Q, "process noise Q"))

    def control(self, t: int) -> np.ndarray:
        if not self.controls:
            return np.zeros(self.B.shape[1])
        return self.controls[min(t, len(self.controls) - 1)]

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "B": self.B.tolist(),
            "controls": [a.tolist() for a in self.controls], "Q": self.Q.tolist(),
        }


@dataclass(frozen=True)
class Landmark:
    id: str
    mean: np.ndarray
    cov: np.ndarray
    class_dist: Mapping[str, float]
    dynamics: LinearDynamics | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", check_psd(self.cov, f"covariance of landmark {self.id}"))
        total = sum(self.class_dist.values())
        if any(v < 0 for v in self.class_dist.values()) or abs(total - 1.0) > 1e-9:
            raise MapError(f"class distribution of landmark {self.id} must sum to 1 (got {total})")

    @property
    def static(self) -> bool:
        return self.dynamics is None


class SemanticMap:
    """Array-backed snapshot of all landmarks at time ``t``.

    ``means`` is (M, 2), ``covs`` is (M, 2, 2), ``class_probs`` is (M, C)
    over ``classes``. Snapshots are treated as immutable; :meth:`replace`
    shares whatever is not overridden.
    """

    __slots__ = ("ids", "means", "covs", "class_probs", "classes", "dynamics", "t", "_index")

    def __init__(self, ids, means, covs, class_probs, classes, dynamics=None, t: int = 0):
        self.ids = tuple(ids)
        self.means = np.asarray(means, dtype=float).reshape(len(self.ids), 2)
        self.covs = np.asarray(covs, dtype=float).reshape(len(self.ids), 2, 2)
        self.class_probs = np.asarray(class_probs, dtype=float).reshape(len(self.ids), len(classes))
        self.classes = tuple(classes)
        self.dynamics = tuple(dynamics) if dynamics is not None else (None,) * len(self.ids)
        self.t = t
        self._index = {k: i for i, k in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise MapError("landmark ids must be unique")

    @classmethod
    def from_landmarks(cls, landmarks: Sequence[Landmark], classes: Sequence[str] | None = None,
                       t: int = 0) -> "SemanticMap":
        if classes is None:
            classes = sorted({c for lm in landmarks for c in lm.class_dist})
        classes = tuple(classes)
        for lm in landmarks:
            unknown = set(lm.class_dist) - set(classes)
            if unknown:
                raise MapError(f"landmark {lm.id} uses unknown classes {sorted(unknown)}")
        probs = [[lm.class_dist.get(c, 0.0) for c in classes] for lm in landmarks]
        return cls(
            [lm.id for lm in landmarks],
            [lm.mean for lm in landmarks] or np.zeros((0, 2)),
            [lm.cov for lm in landmarks] or np.zeros((0, 2, 2)),
            probs or np.zeros((0, len(classes))),
            classes,
            [lm.dynamics for lm in landmarks],
            t,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, landmark_id: str) -> int:
        try:
            return self._index[landmark_id]
        except KeyError:
            raise MapError(f"unknown landmark {landmark_id!r}") from None

    def class_index(self, cls: str) -> int:
        try:
            return self.classes.index(cls)
        except ValueError:
            raise MapError(f"unknown class {cls!r}") from None

    def landmark(self, landmark_id: str) -> Landmark:
        i = self.index(landmark_id)
        return Landmark(
            self.ids[i], self.means[i].copy(), self.covs[i].copy(),
            dict(zip(self.classes, self.class_probs[i].tolist())), self.dynamics[i],
        )

    def landmarks(self) -> list[Landmark]:
        return [self.landmark(k) for k in self.ids]

    def replace(self, **kw) -> "SemanticMap":
        new = object.__new__(SemanticMap)
        for slot in self.__slots__:
            setattr(new, slot, kw.pop(slot, getattr(self, slot)))
        if kw:
            raise TypeError(f"unknown fields {sorted(kw)}")
        return new


# -- Gaussian mass of a disk ------------------------------------------------

_FAR = 8.5  # whitened distance beyond which the remaining mass is < 2e-16


def _eig2(a: float, b: float, c: float):
    """Eigen-decomposition of the symmetric matrix [[a, b], [b, c]] (ascending)."""
    half_tr = 0.5 * (a + c)
    disc = math.hypot(0.5 * (a - c), b)
    lo, hi = half_tr - disc, half_tr + disc
    if b == 0.0:
        v_hi = (1.0, 0.0) if a >= c else (0.0, 1.0)
    else:
        vx, vy = hi - c, b
        n = math.hypot(vx, vy)
        v_hi = (vx / n, vy / n)
    v_lo = (-v_hi[1], v_hi[0])
    return (lo, hi), (v_lo, v_hi)


def _periodic_trapezoid(fun, tol: float = 1e-10, n0: int = 64, nmax: int = 1 << 17) -> float:
    n = n0
    prev = None
    while True:
        theta = np.arange(n) * (2.0 * math.pi / n)
        val = float(np.mean(fun(theta)))
        if prev is not None and abs(val - prev) < tol:
            return val
        if n >= nmax:
            return val
        prev = val
        n *= 2


def prob_within_ball(point, mean, cov, r: float) -> float:
    """``P(||point - x|| <= r)`` for ``x ~ N(mean, cov)`` in the plane.

    In whitened coordinates the disk becomes an ellipse and the probability
    is an angular integral of the radial Gaussian mass along rays from the
    whitened mean, ``(1/2pi) * int (exp(-s1^2/2) - exp(-s2^2/2)) dtheta``,
    with ``[s1, s2]`` the ray's chord through the ellipse. The angular
    integral uses adaptive quadrature (spectral trapezoid when the mean lies
    inside, Gauss-Kronrod over the tangent window otherwise).
    """
    if not r > 0:
        raise MapError(f"radius must be positive, got {r}")
    cx = float(mean[0]) - float(point[0])
    cy = float(mean[1]) - float(point[1])
    a, b, c = float(cov[0][0]), 0.5 * (float(cov[0][1]) + float(cov[1][0])), float(cov[1][1])
    (l1, l2), (v1, v2) = _eig2(a, b, c)
    if l1 < -1e-12 * max(1.0, abs(l2)):
        raise MapError("covariance is not positive semidefinite")
    tiny = 1e-14 * max(l2, 0.0) if l2 > 1e-300 else math.inf
    if l2 <= 1e-300 or l2 <= tiny:
        return 1.0 if math.hypot(cx, cy) <= r else 0.0
    if l1 <= tiny:
        # all mass on the line mean + t * v2, t ~ N(0, l2)
        proj = cx * v2[0] + cy * v2[1]
        disc = proj * proj - (cx * cx + cy * cy - r * r)
        if disc < 0:
            return 0.0
        sq = math.sqrt(disc)
        s = math.sqrt(l2)
        return float(ndtr((-proj + sq) / s) - ndtr((-proj - sq) / s))

    lam = (l1, l2)
    # whitened mean
    mu = ((cx * v1[0] + cy * v1[1]) / math.sqrt(l1), (cx * v2[0] + cy * v2[1]) / math.sqrt(l2))
    norm_mu = math.hypot(*mu)
    if norm_mu - r / math.sqrt(l1) > _FAR:
        return 0.0
    if r / math.sqrt(l2) - norm_mu > _FAR:
        return 1.0
    c0 = lam[0] * mu[0] ** 2 + lam[1] * mu[1] ** 2 - r * r
    lmu = (lam[0] * mu[0], lam[1] * mu[1])

    if c0 <= 0.0:
        def inside(theta):
            ux, uy = np.cos(theta), np.sin(theta)
            qa = lam[0] * ux * ux + lam[1] * uy * uy
            qb = lmu[0] * ux + lmu[1] * uy
            sq = np.sqrt(np.maximum(qb * qb - qa * c0, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                s2 = np.where(qb > 0, -c0 / (qb + sq), (sq - qb) / qa)
            return -np.expm1(-0.5 * s2 * s2)

        return min(1.0, max(0.0, _periodic_trapezoid(inside)))

    # mean outside the ellipse: integrate over the window of rays that hit it
    sx, sy = math.sqrt(lam[0]) / r, math.sqrt(lam[1]) / r
    px, py = mu[0] * sx, mu[1] * sy  # mean mapped to where the ellipse is a unit circle
    dist = math.hypot(px, py)
    phi0 = math.atan2(py, px)
    alpha = math.acos(min(1.0, 1.0 / dist))
    center = math.atan2(-mu[1], -mu[0])
    offs = []
    for sgn in (1.0, -1.0):
        tx, ty = math.cos(phi0 + sgn * alpha) / sx, math.sin(phi0 + sgn * alpha) / sy
        ang = math.atan2(ty - mu[1], tx - mu[0]) - center
        offs.append((ang + math.pi) % (2.0 * math.pi) - math.pi)
    lo, hi = min(offs), max(offs)

    def outside(off):
        theta = center + off
        ux, uy = math.cos(theta), math.sin(theta)
        qa = lam[0] * ux * ux + lam[1] * uy * uy
        qb = lmu[0] * ux + lmu[1] * uy
        disc = qb * qb - qa * c0
        if disc <= 0.0 or qb >= 0.0:
            return 0.0
        s2 = (-qb + math.sqrt(disc)) / qa
        s1 = c0 / (qa * s2)
        return math.exp(-0.5 * s1 * s1) - math.exp(-0.5 * s2 * s2)

    val, _ = quad(outside, lo, hi, epsabs=1e-10, epsrel=1e-10, limit=200)
    return min(1.0, max(0.0, val / (2.0 * math.pi)))


# -- predicates and labels --------------------------------------------------

def _robot_xy(p, robot: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p.reshape(-1, 3) if p.size % 3 == 0 else p.reshape(-1, 2)
    if not 1 <= robot <= len(p):
        raise MapError(f"unknown robot {robot}")
    return p[robot - 1, :2]


def eval_predicate(pred, p, smap: SemanticMap, workspace: Workspace | None = None,
                   props: Mapping[str, bool] | None = None) -> bool:
    """Truth of one atomic predicate for multi-robot state ``p`` (rows x, y, theta)."""
    if isinstance(pred, fm.Region):
        if workspace is None:
            raise MapError("region predicates need a workspace")
        return workspace.in_region(pred.region, _robot_xy(p, pred.robot))
    if isinstance(pred, fm.NearLandmark):
        i = smap.index(pred.landmark)
        prob = prob_within_ball(_robot_xy(p, pred.robot), smap.means[i], smap.covs[i], pred.r)
        return prob >= 1.0 - pred.delta
    if isinstance(pred, fm.UncertaintyBelow):
        i = smap.index(pred.landmark)
        return float(np.linalg.det(smap.covs[i])) <= pred.delta
    if isinstance(pred, fm.NearLandmarkClass):
        i = smap.index(pred.landmark)
        k = smap.class_index(pred.cls)
        prob = prob_within_ball(_robot_xy(p, pred.robot), smap.means[i], smap.covs[i], pred.r)
        return prob * smap.class_probs[i, k] >= 1.0 - pred.delta
    if isinstance(pred, fm.Prop):
        if props is None or pred.name not in props:
            raise MapError(f"proposition {pred.name!r} has no interpretation")
        return bool(props[pred.name])
    raise TypeError(f"unsupported predicate {pred!r}")


def label(p, smap: SemanticMap, predicates: Iterable, workspace: Workspace | None = None,
          props: Mapping[str, bool] | None = None) -> frozenset[str]:
    """Ids of every predicate in the universe that holds at ``(p, smap)``."""
    return frozenset(
        pred.id for pred in predicates if eval_predicate(pred, p, smap, workspace, props)
    )
