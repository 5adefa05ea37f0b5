"""External-force observers built on the platform momentum ``p = M x_dot``.

All observers are stepped once per control tick with

* ``p``     momentum from the estimated inertia and the measured twist,
* ``F_m``   the actuation force that was applied over the interval just ended
            (zero-order hold), and
* ``beta``  the model term ``g + F_fr - C^T x_dot`` at the current sample.

The first call initialises the internal state from the given momentum and
returns a zero estimate.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NotSPD

OBSERVER_IDS = ("mo", "kf", "sosml")


def beta_hat(terms, xdot):
    """``g + F_fr - C^T x_dot`` from estimated dynamics terms (needs the ``C`` factor)."""
    return terms.g + terms.F_fr - terms.C.T @ np.asarray(xdot, float)


def momentum(terms, xdot):
    return terms.M @ np.asarray(xdot, float)


def _diag3(v, name):
    v = np.broadcast_to(np.asarray(v, float), (3,)).copy()
    if np.any(v <= 0):
        raise ValueError(f"{name} entries must be positive")
    return v


class MomentumObserver:
    """Classical momentum observer with first-order estimate dynamics.

    The inner integral is discretised with the trapezoid rule.  Because the
    estimate itself appears in the integrand the update is implicit, which is
    solved exactly for diagonal gains.  ``F_m`` is integrated exactly as a
    held value.
    """

    name = "mo"

    def __init__(self, gain, dt):
        self.gain = _diag3(gain, "gain")
        self.dt = float(dt)
        self.reset()

    def reset(self):
        self.p0 = None
        self.integral = np.zeros(3)
        self.F_hat = np.zeros(3)
        self._beta = None

    def step(self, p, F_m, beta):
        p = np.asarray(p, float)
        beta = np.asarray(beta, float)
        if self.p0 is None:
            self.p0 = p.copy()
            self._beta = beta.copy()
            return self.F_hat.copy()
        h = 0.5 * self.dt
        base = (self.integral + self.dt * np.asarray(F_m, float)
                - h * (self._beta + beta) + h * self.F_hat)
        k = self.gain
        F_new = k * (p - self.p0 - base) / (1.0 + k * h)
        self.integral = base + h * F_new
        self.F_hat = F_new
        self._beta = beta.copy()
        return F_new.copy()


def kf_process_noise(q_p, q_f, dt):
    """Exact discretisation of white-noise intensities for one ``[p, F]`` axis."""
    return np.array([
        [q_p * dt + q_f * dt ** 3 / 3.0, q_f * dt ** 2 / 2.0],
        [q_f * dt ** 2 / 2.0, q_f * dt],
    ])


def observability_matrix(Phi, H):
    n = Phi.shape[0]
    blocks = [H]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ Phi)
    return np.vstack(blocks)


class KalmanObserver:
    """Kalman filter on the stacked state ``[p (3), F_ext (3)]``.

    The momentum block integrates ``F_m - beta + F_ext`` and the force block is
    a random walk.  ``q_p`` and ``q_f`` are continuous noise intensities and
    ``r`` the momentum measurement variance, all per axis.
    """

    name = "kf"

    def __init__(self, dt, q_p=1e-3, q_f=10.0, r=8e-5, p0_var=1.0):
        self.dt = float(dt)
        self.q_p = np.broadcast_to(np.asarray(q_p, float), (3,)).copy()
        self.q_f = np.broadcast_to(np.asarray(q_f, float), (3,)).copy()
        self.r = np.broadcast_to(np.asarray(r, float), (3,)).copy()
        if np.any(self.q_p < 0) or np.any(self.q_f < 0) or np.any(self.r < 0):
            raise ValueError("noise covariances must be non-negative")
        I = np.eye(3)
        Z = np.zeros((3, 3))
        self.Phi = np.block([[I, self.dt * I], [Z, I]])
        self.B = np.vstack([self.dt * I, Z])
        self.H = np.hstack([I, Z])
        Q = np.zeros((6, 6))
        for a in range(3):
            idx = [a, a + 3]
            Q[np.ix_(idx, idx)] = kf_process_noise(self.q_p[a], self.q_f[a], self.dt)
        self.Q = Q
        self.R = np.diag(self.r)
        self.p0_var = float(p0_var)
        self.reset()

    def reset(self):
        self.s = None
        self.P = None
        self._beta = None

    @property
    def F_hat(self):
        return np.zeros(3) if self.s is None else self.s[3:].copy()

    def step(self, p, F_m, beta):
        p = np.asarray(p, float)
        beta = np.asarray(beta, float)
        if self.s is None:
            self.s = np.concatenate([p, np.zeros(3)])
            self.P = np.diag(np.concatenate([self.r, np.full(3, self.p0_var)]))
            self._beta = beta.copy()
            return self.F_hat
        u = np.asarray(F_m, float) - 0.5 * (self._beta + beta)
        s = self.Phi @ self.s + self.B @ u
        P = self.Phi @ self.P @ self.Phi.T + self.Q
        S = self.H @ P @ self.H.T + self.R
        K = np.linalg.solve(S, self.H @ P).T
        s = s + K @ (p - self.H @ s)
        A = np.eye(6) - K @ self.H
        P = A @ P @ A.T + K @ self.R @ K.T
        asym = np.max(np.abs(P - P.T))
        if asym > 1e-9 * max(1.0, np.max(np.abs(P))):
            raise NotSPD(f"covariance lost symmetry ({asym:.3g})")
        self.P = 0.5 * (P + P.T)
        self.s = s
        self._beta = beta.copy()
        return self.F_hat


@dataclass
class SlidingModeGains:
    """Per-axis gains of the sliding-mode observer.

    ``T1`` multiplies the square-root term, ``T2`` the linear momentum error;
    ``S1`` the switching term and ``S2`` the linear term of the force update.
    """

    T1: np.ndarray = field(default_factory=lambda: np.full(3, 15.0))
    T2: np.ndarray = field(default_factory=lambda: np.full(3, 160.0))
    S1: np.ndarray = field(default_factory=lambda: np.full(3, 100.0))
    S2: np.ndarray = field(default_factory=lambda: np.full(3, 6400.0))

    def __post_init__(self):
        for name in ("T1", "T2", "S1", "S2"):
            setattr(self, name, _diag3(getattr(self, name), name))


def sosml_gain_condition(gains, disturbance_bound):
    """Check the switching gains against a bound on the force rate (N/s per axis).

    Uses the sufficient condition ``S1 > 3 d + 2 d^2 / T1^2`` for the
    square-root / switching pair.  Returns a boolean array per axis.
    """
    d = np.broadcast_to(np.asarray(disturbance_bound, float), (3,))
    return gains.S1 > 3.0 * d + 2.0 * d ** 2 / gains.T1 ** 2


def check_sosml_gains(gains, disturbance_bound, field_name="observers.sosml"):
    ok = sosml_gain_condition(gains, disturbance_bound)
    if not np.all(ok):
        axes = [int(a) for a in np.flatnonzero(~ok)]
        raise ConfigError(field_name, f"switching gain S1 too small for disturbance bound on axes {axes}")


class SlidingModeObserver:
    """Second-order sliding-mode momentum observer with linear terms (explicit Euler)."""

    name = "sosml"

    def __init__(self, gains, dt):
        self.gains = gains
        self.dt = float(dt)
        self.reset()

    def reset(self):
        self.p_hat = None
        self.F_hat = np.zeros(3)
        self._beta = None

    def step(self, p, F_m, beta):
        p = np.asarray(p, float)
        beta = np.asarray(beta, float)
        if self.p_hat is None:
            self.p_hat = p.copy()
            self._beta = beta.copy()
            return self.F_hat.copy()
        g = self.gains
        # the estimate update uses the state at the start of the interval
        e = self.p_hat - p
        sq = np.sqrt(np.abs(e)) * np.sign(e)
        dp = np.asarray(F_m, float) - self._beta - g.T1 * sq - g.T2 * e + self.F_hat
        dF = -g.S1 * np.sign(e) - g.S2 * e
        self.p_hat = self.p_hat + self.dt * dp
        self.F_hat = self.F_hat + self.dt * dF
        self._beta = beta.copy()
        return self.F_hat.copy()


def make_observer(name, dt, cfg):
    """Construct an observer from its config mapping."""
    if name == "mo":
        return MomentumObserver(cfg.get("gain", 20.0), dt)
    if name == "kf":
        return KalmanObserver(dt, q_p=cfg.get("q_p", 1e-3), q_f=cfg.get("q_f", 10.0),
                              r=cfg.get("r", 8e-5), p0_var=cfg.get("p0_var", 1.0))
    if name == "sosml":
        gains = SlidingModeGains(**{k: cfg[k] for k in ("T1", "T2", "S1", "S2") if k in cfg})
        bound = cfg.get("disturbance_bound")
        if bound is not None:
            check_sosml_gains(gains, bound)
        return SlidingModeObserver(gains, dt)
    raise ValueError(f"unknown observer {name!r}")


class ObserverBank:
    """The enabled observers fed from the same model terms each tick."""

    def __init__(self, observers):
        self.observers = dict(observers)

    def step(self, terms, xdot, F_m_applied):
        p = momentum(terms, xdot)
        beta = beta_hat(terms, xdot)
        return {name: obs.step(p, F_m_applied, beta) for name, obs in self.observers.items()}
