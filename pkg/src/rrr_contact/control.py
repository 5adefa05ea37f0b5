"""Cartesian impedance control in platform coordinates."""
from dataclasses import dataclass, field

import numpy as np

from .errors import NotSPD
from .kinematics import wrap_angle

EIG_FLOOR = 1e-12


@dataclass
class ImpedanceGains:
    """Diagonal stiffness ``K`` (N/m, N/m, N*m/rad) and modal damping ratios ``D_xi``."""

    stiffness: np.ndarray
    damping_ratio: np.ndarray = field(default_factory=lambda: np.full(3, 0.7))

    def __post_init__(self):
        self.stiffness = np.broadcast_to(np.asarray(self.stiffness, float), (3,)).copy()
        self.damping_ratio = np.broadcast_to(np.asarray(self.damping_ratio, float), (3,)).copy()
        if np.any(self.stiffness <= 0):
            raise ValueError("stiffness entries must be positive")
        if np.any(self.damping_ratio < 0):
            raise ValueError("damping ratios must be non-negative")

    @property
    def K(self):
        return np.diag(self.stiffness)

    @property
    def D_xi(self):
        return np.diag(self.damping_ratio)


def spd_sqrt(A):
    """Unique symmetric positive-definite square root via ``eigh``."""
    A = np.asarray(A, dtype=float)
    try:
        w, V = np.linalg.eigh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise NotSPD(str(exc)) from exc
    if w[0] <= 0.0:
        raise NotSPD(f"matrix has non-positive eigenvalue {w[0]:.3g}")
    return (V * np.sqrt(np.maximum(w, EIG_FLOOR))) @ V.T


def damping_design(M, K, D_xi):
    """Factorized damping ``D = M~ D_xi K~ + K~ D_xi M~`` with SPD roots of M and K."""
    Mr = spd_sqrt(M)
    Kr = spd_sqrt(K)
    D_xi = np.asarray(D_xi, dtype=float)
    if D_xi.ndim == 1:
        D_xi = np.diag(D_xi)
    return Mr @ D_xi @ Kr + Kr @ D_xi @ Mr


def pose_error(x_d, x):
    """``x_d - x`` with the orientation difference wrapped to (-pi, pi]."""
    e = np.asarray(x_d, dtype=float) - np.asarray(x, dtype=float)
    e[2] = wrap_angle(e[2])
    return e


class QuinticTrajectory:
    """Rest-to-rest quintic segments through a list of via poses.

    ``durations[k]`` is the time spent moving from ``poses[k]`` to
    ``poses[k+1]``.  Before ``start_time`` and after the last segment the
    trajectory holds its end poses.
    """

    def __init__(self, poses, durations, start_time=0.0):
        self.poses = np.atleast_2d(np.asarray(poses, dtype=float))
        self.durations = np.atleast_1d(np.asarray(durations, dtype=float))
        if self.poses.shape[1] != 3:
            raise ValueError("poses must have 3 columns")
        if len(self.durations) != len(self.poses) - 1:
            raise ValueError("need one duration per segment")
        if np.any(self.durations <= 0):
            raise ValueError("segment durations must be positive")
        self.start_time = float(start_time)
        self._t0 = self.start_time + np.concatenate([[0.0], np.cumsum(self.durations)])

    @classmethod
    def hold(cls, pose):
        return cls([pose, pose], [1.0])

    @classmethod
    def point_to_point(cls, start, goal, peak_speed, start_time=0.0):
        """Single segment whose peak translational speed equals ``peak_speed``."""
        start = np.asarray(start, dtype=float)
        goal = np.asarray(goal, dtype=float)
        dist = float(np.linalg.norm(goal[:2] - start[:2]))
        if dist == 0.0 or peak_speed <= 0:
            raise ValueError("need a nonzero translation and positive speed")
        return cls([start, goal], [1.875 * dist / peak_speed], start_time)

    @property
    def end_time(self):
        return float(self._t0[-1])

    def sample(self, t):
        """``(x_d, xdot_d, xddot_d)`` at time ``t``."""
        if t <= self._t0[0]:
            return self.poses[0].copy(), np.zeros(3), np.zeros(3)
        if t >= self._t0[-1]:
            return self.poses[-1].copy(), np.zeros(3), np.zeros(3)
        k = int(np.searchsorted(self._t0, t, side="right")) - 1
        T = self.durations[k]
        s = (t - self._t0[k]) / T
        a = self.poses[k]
        d = self.poses[k + 1] - a
        s2 = s * s
        h = s2 * s * (10.0 - 15.0 * s + 6.0 * s2)
        dh = 30.0 * s2 * (1.0 - s) ** 2 / T
        ddh = 60.0 * s * (1.0 - 3.0 * s + 2.0 * s2) / (T * T)
        return a + h * d, dh * d, ddh * d


class ImpedanceController:
    """Impedance law with feedforward compensation from the estimated model.

    After :meth:`react` the command collapses to gravity compensation.
    """

    def __init__(self, gains):
        self.gains = gains
        self.reacting = False

    def react(self):
        self.reacting = True

    def force(self, terms, x, xdot, x_d, xdot_d, xddot_d):
        if self.reacting:
            return zero_torque_reaction(terms)
        return impedance_force(terms, self.gains, x, xdot, x_d, xdot_d, xddot_d)


def impedance_force(terms, gains, x, xdot, x_d, xdot_d, xddot_d):
    """``F_m = c + g + M xdd_d + F_fr + K e + D de`` from estimated ``terms``."""
    e = pose_error(x_d, x)
    de = np.asarray(xdot_d, float) - np.asarray(xdot, float)
    D = damping_design(terms.M, gains.K, gains.D_xi)
    return (terms.c + terms.g + terms.M @ np.asarray(xddot_d, float) + terms.F_fr
            + gains.stiffness * e + D @ de)


def zero_torque_reaction(terms):
    """Command after a detection: gravity compensation only."""
    return terms.g.copy()
