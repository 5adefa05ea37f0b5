"""Closed-loop scenario engine: plant, sensors, contacts, observers and logging.

One control tick of ``dt`` does, in order: measure the plant, run forward
kinematics on the measured angles, evaluate the estimated model, step the
observers, update the detectors, compute the command (or the reaction), log
the tick and integrate the plant with ``substeps`` RK4 steps.  Actuator
torques and the contact wrench are held constant over the tick.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .control import ImpedanceController, ImpedanceGains, QuinticTrajectory
from .detection import DetectionConfig, Detector
from .dynamics import DynamicsParams, ModelError, RobotModel
from .errors import KinematicsError, SchemaMismatch
from .kinematics import (ChainSolver, ContactLocation, Geometry,
                         contact_jacobians, contact_point_pose, forward_kinematics,
                         inverse_kinematics, wrap_angle)
from .observers import OBSERVER_IDS, ObserverBank, make_observer

# ---------------------------------------------------------------------------
# sensors
# ---------------------------------------------------------------------------


@dataclass
class SensorPipeline:
    """Encoder quantisation and velocity filtering.

    ``enabled=False`` hands the exact plant state to the controller.  Torque
    measurement noise (N*m, standard deviation) is applied on the observer
    side only and is independent of ``enabled``.
    """

    enabled: bool = True
    active_quantum_deg: float = 0.0056
    passive_quantum_deg: float = 0.1
    cutoff_hz: float = 30.0
    torque_noise_std: float = 0.0

    def __post_init__(self):
        if self.active_quantum_deg <= 0 or self.passive_quantum_deg <= 0:
            raise ValueError("encoder quanta must be positive")
        if self.cutoff_hz <= 0:
            raise ValueError("cutoff frequency must be positive")
        if self.torque_noise_std < 0:
            raise ValueError("noise level must be non-negative")


def quantize(a, quantum):
    return np.round(np.asarray(a, float) / quantum) * quantum


class Sensors:
    """Stateful measurement of the active/passive angles and active rates."""

    def __init__(self, pipeline, dt):
        self.pipeline = pipeline
        self.dt = float(dt)
        self.alpha = 1.0 - math.exp(-2.0 * math.pi * pipeline.cutoff_hz * self.dt)
        self._qa_q = math.radians(pipeline.active_quantum_deg)
        self._qp_q = math.radians(pipeline.passive_quantum_deg)
        self._prev = None
        self._vel = np.zeros(3)

    def measure(self, qa, qp, qa_dot=None):
        """``(qa_m, qp_m, qa_dot_m)`` for one tick.

        With the pipeline disabled the inputs are returned unchanged and
        ``qa_dot`` must be supplied.
        """
        if not self.pipeline.enabled:
            return np.asarray(qa, float), np.asarray(qp, float), np.asarray(qa_dot, float)
        qa_m = quantize(qa, self._qa_q)
        qp_m = quantize(qp, self._qp_q)
        if self._prev is None:
            raw = np.zeros(3)
        else:
            raw = wrap_angle(qa_m - self._prev) / self.dt
        self._prev = qa_m
        self._vel = self._vel + self.alpha * (raw - self._vel)
        return qa_m, qp_m, self._vel.copy()


# ---------------------------------------------------------------------------
# contact models
# ---------------------------------------------------------------------------


class PrescribedWrench:
    """Time profile of a planar wrench ``(fx, fy, mz)`` at the contact point.

    ``profile`` is ``"step"`` (full wrench from ``onset``), ``"ramp"`` (linear
    rise over ``ramp_time``, optionally back to zero over the same time after
    ``hold``) or ``"table"`` (rows ``t, fx, fy, mz`` linearly interpolated).
    """

    kind = "prescribed"

    def __init__(self, wrench=(0.0, 0.0, 0.0), onset=0.0, profile="step",
                 ramp_time=1.0, hold=None, table=None):
        self.wrench = np.asarray(wrench, float)
        self.onset = float(onset)
        self.profile = profile
        self.ramp_time = float(ramp_time)
        self.hold = hold
        self.table = None if table is None else np.asarray(table, float)
        if profile not in ("step", "ramp", "table"):
            raise ValueError(f"unknown wrench profile {profile!r}")
        if profile == "table" and (self.table is None or self.table.shape[1] != 4):
            raise ValueError("table profile needs rows of (t, fx, fy, mz)")

    def scale(self, t):
        s = t - self.onset
        if s < 0:
            return 0.0
        if self.profile == "step":
            return 1.0
        rise = min(s / self.ramp_time, 1.0)
        if self.hold is None:
            return rise
        fall_start = self.ramp_time + float(self.hold)
        return max(0.0, min(rise, 1.0 - (s - fall_start) / self.ramp_time))

    def wrench_at(self, t, pose, twist):
        if self.profile == "table":
            if t < self.onset:
                return np.zeros(3)
            tab = self.table
            return np.array([np.interp(t, tab[:, 0], tab[:, k]) for k in (1, 2, 3)])
        return self.scale(t) * self.wrench


class SpringWall:
    """Unilateral spring-damper wall acting along its outward normal."""

    kind = "spring_wall"

    def __init__(self, point, normal, stiffness=5000.0, damping=50.0):
        self.point = np.asarray(point, float)
        n = np.asarray(normal, float)
        self.normal = n / np.linalg.norm(n)
        self.stiffness = float(stiffness)
        self.damping = float(damping)

    def penetration(self, pose):
        return float(self.normal @ (self.point - pose[:2]))

    def wrench_at(self, t, pose, twist):
        depth = self.penetration(pose)
        if depth <= 0.0:
            return np.zeros(3)
        rate = -float(self.normal @ twist[:2])
        f = max(0.0, self.stiffness * depth + self.damping * rate)
        return np.array([f * self.normal[0], f * self.normal[1], 0.0])


class ClampSpring:
    """Spring-damper tying the contact point to where it was at ``onset``."""

    kind = "clamp_spring"

    def __init__(self, onset, stiffness=2000.0, damping=5.0):
        self.onset = float(onset)
        self.stiffness = float(stiffness)
        self.damping = float(damping)
        self.anchor = None

    def reset(self):
        self.anchor = None

    def wrench_at(self, t, pose, twist):
        if t < self.onset:
            return np.zeros(3)
        if self.anchor is None:
            self.anchor = pose[:2].copy()
        f = -self.stiffness * (pose[:2] - self.anchor) - self.damping * twist[:2]
        return np.array([f[0], f[1], 0.0])


@dataclass
class ContactSpec:
    location: ContactLocation
    model: object

    @property
    def label(self):
        return self.location.label


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    geometry: Geometry
    params: DynamicsParams
    sigma: np.ndarray
    gains: ImpedanceGains
    trajectory: QuinticTrajectory
    duration: float
    observers: tuple = OBSERVER_IDS
    observer_cfg: dict = field(default_factory=dict)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    reaction: bool = True
    reaction_observer: str = "mo"
    contact: ContactSpec = None
    sensors: SensorPipeline = field(default_factory=SensorPipeline)
    model_error: ModelError = field(default_factory=ModelError)
    dt: float = 1e-3
    substeps: int = 4
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, float)
        self.observers = tuple(self.observers)
        for name in self.observers:
            if name not in OBSERVER_IDS:
                raise ValueError(f"unknown observer {name!r}")
        if self.reaction_observer not in OBSERVER_IDS + ("any",):
            raise ValueError(f"unknown reaction observer {self.reaction_observer!r}")
        if self.duration <= 0 or self.dt <= 0 or self.substeps < 1:
            raise ValueError("duration, dt and substeps must be positive")
        if self.contact is not None:
            self.contact.location.validate(self.geometry)
            onset = getattr(self.contact.model, "onset", 0.0)
            if onset > self.duration:
                raise ValueError("contact onset lies beyond the run duration")

    @property
    def n_ticks(self):
        return int(round(self.duration / self.dt))


def default_scenario(**overrides):
    """Rest at the workspace centre with default geometry and parameters."""
    geom = Geometry.symmetric()
    kw = dict(
        geometry=geom,
        params=DynamicsParams.default(geom),
        sigma=np.ones(3),
        gains=ImpedanceGains([2000.0, 2000.0, 85.0], [0.7, 0.7, 0.7]),
        trajectory=QuinticTrajectory.hold(np.zeros(3)),
        duration=1.0,
    )
    kw.update(overrides)
    return Scenario(**kw)


# ---------------------------------------------------------------------------
# log
# ---------------------------------------------------------------------------

AXES = ("rx", "ry", "phi")
WRENCH_AXES = ("fx", "fy", "mz")


def _cols(prefix, names):
    return [f"{prefix}_{n}" for n in names]


LOG_COLUMNS = (
    ["t"]
    + _cols("x", AXES) + _cols("xdot", AXES) + _cols("xd", AXES)
    + _cols("Fm", WRENCH_AXES) + ["tau_1", "tau_2", "tau_3"]
    + _cols("Fext", WRENCH_AXES)
    + [c for obs in OBSERVER_IDS for c in _cols(f"F_{obs}", WRENCH_AXES)]
    + [f"trig_{obs}" for obs in OBSERVER_IDS]
    + _cols("xtrue", AXES) + _cols("xdottrue", AXES)
)
EVENT_COLUMNS = ["observer", "contact", "t_onset", "t_detect", "delta_t_cd", "axis"]


class RunLog:
    """Per-tick table plus detection events.

    ``x``/``xdot`` columns hold the measured values fed to the observers;
    the ``xtrue``/``xdottrue`` columns hold the plant state.
    """

    def __init__(self, rows=None, events=None, meta=None):
        self.rows = rows if rows is not None else []
        self.events = events if events is not None else []
        self.meta = meta if meta is not None else {}
        self._array = None

    def append(self, row):
        self.rows.append(row)
        self._array = None

    @property
    def array(self):
        if self._array is None:
            self._array = np.array(self.rows, dtype=float).reshape(-1, len(LOG_COLUMNS))
        return self._array

    def column(self, name):
        return self.array[:, LOG_COLUMNS.index(name)]

    def block(self, prefix, names=WRENCH_AXES):
        return np.stack([self.column(f"{prefix}_{n}") for n in names], axis=1)

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([repr(float(v)) for v in row])

    def write_events(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EVENT_COLUMNS)
            for ev in self.events:
                w.writerow([ev.observer, ev.label, repr(ev.t_onset), repr(ev.t_detect),
                            repr(ev.delta_t_cd), ev.axis])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaMismatch(f"{path}: empty log") from None
            if header != list(LOG_COLUMNS):
                raise SchemaMismatch(f"{path}: unexpected columns")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != len(LOG_COLUMNS):
                    raise SchemaMismatch(f"{path}: line {lineno} has {len(rec)} fields")
                try:
                    rows.append([float(v) for v in rec])
                except ValueError as exc:
                    raise SchemaMismatch(f"{path}: line {lineno}: {exc}") from None
        if not rows:
            raise SchemaMismatch(f"{path}: log has no samples")
        return cls(rows)


# ---------------------------------------------------------------------------
# plant
# ---------------------------------------------------------------------------


def rk4_step(model, x, xdot, tau, F_ext, h):
    """One classical RK4 step of the plant with held torques and external wrench."""
    def f(xx, vv):
        return vv, model.acceleration_from_torque(xx, vv, tau, F_ext)

    k1x, k1v = f(x, xdot)
    k2x, k2v = f(x + 0.5 * h * k1x, xdot + 0.5 * h * k1v)
    k3x, k3v = f(x + 0.5 * h * k2x, xdot + 0.5 * h * k2v)
    k4x, k4v = f(x + h * k3x, xdot + h * k3v)
    x_new = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v_new = xdot + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return x_new, v_new


def contact_state(loc, x, xdot, geom, sigma):
    """Contact pose, twist and the joint configuration at plant state ``(x, xdot)``."""
    q = inverse_kinematics(x, sigma, geom)
    pose = contact_point_pose(loc, q, geom)
    _, J_c_x, _ = contact_jacobians(loc, q, x, geom)
    return pose, J_c_x @ xdot, J_c_x


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------


def build_observers(sc):
    return ObserverBank(
        {name: make_observer(name, sc.dt, sc.observer_cfg.get(name, {})) for name in sc.observers}
    )


def run(sc, x0=None, xdot0=None):
    """Simulate a scenario and return its :class:`RunLog`.

    The plant starts at rest on the trajectory's initial pose unless
    ``x0``/``xdot0`` are given.  Kinematic failures end the run early; the
    partial log carries the reason in ``meta["aborted"]``.
    """
    geom = sc.geometry
    plant = RobotModel(geom, sc.params, sc.sigma)
    model = plant.with_error(sc.model_error)
    solver = ChainSolver(geom, sc.sigma)
    sensors = Sensors(sc.sensors, sc.dt)
    bank = build_observers(sc)
    detectors = {name: Detector(name, sc.detection) for name in sc.observers}
    controller = ImpedanceController(sc.gains)
    rng = np.random.default_rng(sc.seed)
    noise_std = sc.sensors.torque_noise_std
    contact = sc.contact
    if contact is not None and hasattr(contact.model, "reset"):
        contact.model.reset()

    x = np.array(sc.trajectory.sample(0.0)[0] if x0 is None else x0, dtype=float)
    xdot = np.zeros(3) if xdot0 is None else np.array(xdot0, dtype=float)
    F_m_prev = np.zeros(3)
    h = sc.dt / sc.substeps
    log = RunLog(meta={"name": sc.name, "contact": contact.label if contact else "",
                       "t_onset": None, "aborted": None})
    nan3 = [float("nan")] * 3

    for k in range(sc.n_ticks):
        t = k * sc.dt
        try:
            chains = solver.solve(x)
            J_true = ChainSolver.active_map(chains)
            if sc.sensors.enabled:
                qa = np.array([wrap_angle(ch[0]) for ch in chains])
                qp = np.array([ch[2] for ch in chains])
                qa_m, qp_m, qa_dot_m = sensors.measure(qa, qp)
                x_m = forward_kinematics(qa_m, qp_m, geom, sc.sigma)
                J_m = model.active_map(x_m)
                xdot_m = np.linalg.solve(J_m, qa_dot_m)
            else:
                x_m, xdot_m, J_m = x.copy(), xdot.copy(), J_true
            terms = model.terms(x_m, xdot_m, coriolis="fd")
        except KinematicsError as exc:
            log.meta["aborted"] = f"t={t:.3f}: {exc}"
            break

        estimates = bank.step(terms, xdot_m, F_m_prev)
        for name, F_hat in estimates.items():
            if detectors[name].update(t, F_hat):
                if sc.reaction and sc.reaction_observer in (name, "any"):
                    controller.react()

        x_d, xdot_d, xddot_d = sc.trajectory.sample(t)
        F_m = controller.force(terms, x_m, xdot_m, x_d, xdot_d, xddot_d)
        tau = np.linalg.solve(J_m.T, F_m)

        F_ext = np.zeros(3)
        if contact is not None:
            try:
                pose, twist, J_c_x = contact_state(contact.location, x, xdot, geom, sc.sigma)
            except KinematicsError as exc:
                log.meta["aborted"] = f"t={t:.3f}: {exc}"
                break
            F_link = contact.model.wrench_at(t, pose, twist)
            if np.any(F_link != 0.0):
                F_ext = J_c_x.T @ F_link
                if log.meta["t_onset"] is None:
                    log.meta["t_onset"] = getattr(contact.model, "onset", t) \
                        if contact.model.kind != "spring_wall" else t

        F_m_obs = F_m
        if noise_std > 0.0:
            F_m_obs = F_m + J_m.T @ rng.normal(0.0, noise_std, 3)

        row = [t, *x_m, *xdot_m, *x_d, *F_m_obs, *tau, *F_ext]
        for name in OBSERVER_IDS:
            row.extend(estimates[name] if name in estimates else nan3)
        row.extend(float(detectors[n].triggered) if n in detectors else 0.0 for n in OBSERVER_IDS)
        row.extend(x)
        row.extend(xdot)
        log.append(row)
        F_m_prev = F_m_obs

        try:
            for _ in range(sc.substeps):
                x, xdot = rk4_step(plant, x, xdot, tau, F_ext, h)
        except (KinematicsError, np.linalg.LinAlgError) as exc:
            log.meta["aborted"] = f"t={t:.3f}: {exc}"
            break
        x[2] = wrap_angle(x[2])

    onset = log.meta["t_onset"]
    label = log.meta["contact"]
    for det in detectors.values():
        ev = det.event(onset, label)
        if ev is not None:
            log.events.append(ev)
    return log


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------

REFERENCE_DETECTION_RANGE_MS = (9.0, 58.0)


def fit_line(u, y):
    """Least-squares slope and intercept of ``y`` over ``u``."""
    A = np.stack([u, np.ones_like(u)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(intercept)


def fitted_stiffness(log, axis, t_start, t_end):
    """Slope of the true external force over the measured displacement on ``axis``."""
    t = log.column("t")
    sel = (t >= t_start) & (t <= t_end)
    disp = log.column(f"x_{AXES[axis]}")[sel] - log.column(f"xd_{AXES[axis]}")[sel]
    force = log.column(f"Fext_{WRENCH_AXES[axis]}")[sel]
    return fit_line(disp, force)[0]


def summarize(log, sc=None):
    """Key/value summary of a run: detection latencies, peak forces, stiffness fit."""
    out = {"name": log.meta.get("name", ""), "contact": log.meta.get("contact", ""),
           "samples": len(log), "aborted": log.meta.get("aborted") or ""}
    onset = log.meta.get("t_onset")
    out["t_onset"] = "" if onset is None else onset
    detected = {ev.observer: ev for ev in log.events}
    for name in OBSERVER_IDS:
        ev = detected.get(name)
        out[f"t_detect_{name}"] = "" if ev is None else ev.t_detect
        out[f"dt_cd_ms_{name}"] = "" if ev is None or math.isnan(ev.delta_t_cd) else 1e3 * ev.delta_t_cd
        out[f"axis_{name}"] = "" if ev is None else ev.axis
    if len(log):
        F = log.block("Fext")
        out["peak_force_N"] = float(np.max(np.hypot(F[:, 0], F[:, 1])))
        out["peak_moment_Nm"] = float(np.max(np.abs(F[:, 2])))
        for name in OBSERVER_IDS:
            est = log.block(f"F_{name}")
            if np.all(np.isnan(est)):
                continue
            out[f"peak_force_N_{name}"] = float(np.nanmax(np.hypot(est[:, 0], est[:, 1])))
    if sc is not None and sc.contact is not None and isinstance(sc.contact.model, PrescribedWrench) \
            and sc.contact.model.profile == "ramp" and len(log):
        m = sc.contact.model
        axis = int(np.argmax(np.abs(m.wrench)))
        if axis < 2:
            out["fitted_stiffness_N_per_m"] = fitted_stiffness(
                log, axis, m.onset + 0.1 * m.ramp_time, m.onset + m.ramp_time)
    out["reference_detection_range_ms"] = "%g-%g" % REFERENCE_DETECTION_RANGE_MS
    return out


def write_summary(summary, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for k, v in summary.items():
            w.writerow([k, repr(v) if isinstance(v, float) else v])


# ---------------------------------------------------------------------------
# campaign helpers
# ---------------------------------------------------------------------------


def contact_point_along(loc, trajectory, t, geom, sigma):
    """Position and velocity of a structure point while following ``trajectory``."""
    x_d, xdot_d, _ = trajectory.sample(t)
    pose, twist, _ = contact_state(loc, x_d, xdot_d, geom, sigma)
    return pose[:2], twist[:2]


def wall_in_path(loc, trajectory, t_hit, geom, sigma, clearance=0.0):
    """Spring wall placed where ``loc`` passes at ``t_hit``, facing its motion."""
    p, v = contact_point_along(loc, trajectory, t_hit, geom, sigma)
    speed = float(np.linalg.norm(v))
    if speed == 0.0:
        raise ValueError("contact point is not moving at the requested time")
    n = -v / speed
    return p - clearance * n, n, speed


CAMPAIGN_CASES = {
    # name: (location, motion direction in the plane, contact kind)
    "platform_collision": (ContactLocation.platform(), (1.0, 0.0), "wall"),
    "link1_collision": (ContactLocation(1, 1, (0.2, 0.0)), (0.0, 1.0), "wall"),
    "link2_collision": (ContactLocation(1, 2, (0.125, 0.0)), (0.0, 1.0), "wall"),
    "link2_clamp": (ContactLocation(1, 2, (0.125, 0.0)), (0.0, 1.0), "clamp"),
}


def campaign_scenario(case, speed, base=None, stroke=0.2, window=0.1, with_contact=True):
    """Rest-to-rest motion through the centre with a contact at mid-stroke.

    The platform travels ``stroke`` metres with peak speed ``speed``; walls
    are placed where the contact point passes at mid-motion, the clamp
    engages then.  The run ends ``window`` seconds after that instant.
    ``with_contact=False`` gives the contact-free twin.
    """
    loc, direction, kind = CAMPAIGN_CASES[case]
    base = base or default_scenario()
    d = 0.5 * stroke * np.array([direction[0], direction[1], 0.0])
    lead = 0.05
    traj = QuinticTrajectory.point_to_point(-d, d, speed, start_time=lead)
    t_mid = round((lead + 0.5 * traj.durations[0]) / base.dt) * base.dt
    contact = None
    if with_contact:
        if kind == "wall":
            p, n, _ = wall_in_path(loc, traj, t_mid, base.geometry, base.sigma)
            model = SpringWall(p, n)
        else:
            model = ClampSpring(t_mid)
        contact = ContactSpec(loc, model)
    name = f"{case}_{speed:g}" + ("" if with_contact else "_free")
    return Scenario(**{**base.__dict__, "trajectory": traj, "duration": t_mid + window,
                       "contact": contact, "name": name})


def replay_estimates(log, sc):
    """Re-run the observers of ``sc`` offline on a logged run.

    Uses the logged measured pose and twist and, for tick ``k``, the
    actuation force logged at tick ``k-1`` (the one applied in between).
    Returns an array ``(n, 9)`` laid out like the ``F_<observer>`` columns,
    with NaN for observers that are not enabled.
    """
    model = RobotModel(sc.geometry, sc.params, sc.sigma, sc.model_error)
    bank = build_observers(sc)
    X = log.block("x", AXES)
    V = log.block("xdot", AXES)
    Fm = log.block("Fm")
    out = np.full((len(log), 3 * len(OBSERVER_IDS)), np.nan)
    F_prev = np.zeros(3)
    for k in range(len(log)):
        terms = model.terms(X[k], V[k], coriolis="fd")
        est = bank.step(terms, V[k], F_prev)
        for j, name in enumerate(OBSERVER_IDS):
            if name in est:
                out[k, 3 * j:3 * j + 3] = est[name]
        F_prev = Fm[k]
    return out


ESTIMATE_COLUMNS = ["t"] + [c for obs in OBSERVER_IDS for c in _cols(f"F_{obs}", WRENCH_AXES)]


def write_estimates(t, estimates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_COLUMNS)
        for tk, row in zip(t, estimates):
            w.writerow([repr(float(tk)), *(repr(float(v)) for v in row)])
