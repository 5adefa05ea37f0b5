"""Motor torque constant identification from projected contact torques."""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientExcitation, SchemaMismatch
from .kinematics import (ChainSolver, ContactLocation, contact_jacobians,
                         inverse_kinematics)

MIN_SAMPLES = 10
MIN_CURRENT_SPAN = 1.0  # A


@dataclass
class CalibrationSample:
    """Currents (A) and projected external torques (N*m) of one static contact.

    For validation a sample may also carry the measured platform force
    ``F_ext`` and the active map ``J_qa_x`` at its pose.
    """

    current: np.ndarray
    tau_ext: np.ndarray
    label: str = "MP"
    F_ext: np.ndarray = None
    J_qa_x: np.ndarray = None

    def __post_init__(self):
        self.current = np.asarray(self.current, float).reshape(3)
        self.tau_ext = np.asarray(self.tau_ext, float).reshape(3)
        if not (np.all(np.isfinite(self.current)) and np.all(np.isfinite(self.tau_ext))):
            raise ValueError("sample values must be finite")
        ContactLocation.from_label(self.label)


@dataclass
class TorqueConstantFit:
    k_t: np.ndarray
    rmse: np.ndarray
    n_samples: int


def fit_torque_constant(samples, min_span=MIN_CURRENT_SPAN):
    """Per-axis least-squares slope through the origin of torque over current."""
    if len(samples) < MIN_SAMPLES:
        raise InsufficientExcitation(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")
    I = np.array([s.current for s in samples])
    T = np.array([s.tau_ext for s in samples])
    span = I.max(axis=0) - I.min(axis=0)
    if np.any(span < min_span):
        axes = [int(a) for a in np.flatnonzero(span < min_span)]
        raise InsufficientExcitation(f"current span below {min_span} A on axes {axes}")
    k_t = np.sum(I * T, axis=0) / np.sum(I * I, axis=0)
    rmse = np.sqrt(np.mean((T - I * k_t) ** 2, axis=0))
    return TorqueConstantFit(k_t, rmse, len(samples))


def five_numbers(values):
    """``(min, Q1, median, Q3, max)`` of a 1-D sample."""
    return tuple(float(v) for v in np.percentile(values, [0, 25, 50, 75, 100]))


def validate_fit(fit, samples):
    """Platform-force error ``F_ext - F_hat`` grouped by body label.

    ``F_hat = J_qa_x^T (k_t * current)`` is the static force the motors
    explain.  Returns ``(stats, max_abs)`` where ``stats[label][axis]`` holds
    five-number summaries for the two force axes and ``max_abs`` is the
    largest force error over all samples.
    """
    groups = {}
    for s in samples:
        if s.F_ext is None or s.J_qa_x is None:
            raise ValueError("validation samples need F_ext and J_qa_x")
        F_hat = s.J_qa_x.T @ (fit.k_t * s.current)
        groups.setdefault(s.label, []).append(s.F_ext - F_hat)
    stats = {}
    max_abs = 0.0
    for label in sorted(groups):
        err = np.array(groups[label])
        stats[label] = [five_numbers(err[:, a]) for a in range(2)]
        max_abs = max(max_abs, float(np.max(np.abs(err[:, :2]))))
    return stats, max_abs


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

BODY_LABELS = ("MP", "C1L1", "C1L2", "C2L1", "C2L2", "C3L1", "C3L2")


def synthetic_currents(rng, n, k_t, noise_std, current_range=3.0, label="MP"):
    """Samples ``tau = k_t * i + noise`` with currents uniform in ``+-current_range``."""
    k_t = np.broadcast_to(np.asarray(k_t, float), (3,))
    I = rng.uniform(-current_range, current_range, size=(n, 3))
    T = I * k_t + rng.normal(0.0, noise_std, size=(n, 3)) if noise_std > 0 else I * k_t
    return [CalibrationSample(i, t, label) for i, t in zip(I, T)]


def synthetic_contacts(rng, n, geom, sigma, k_t, current_noise_std=0.0, k_t_true=None,
                       force_scale=20.0, workspace_radius=0.08, phi_max=0.2):
    """Static contacts at random poses, bodies and wrenches.

    Each sample projects a random planar force on a random body to actuator
    torques (``tau_ext``) and to the platform (``F_ext``).  The motor currents
    holding the contact are ``tau_ext / k_t_true`` plus Gaussian noise, so
    ``k_t`` is what the fit should recover.
    """
    k_t = np.broadcast_to(np.asarray(k_t, float), (3,))
    k_true = k_t if k_t_true is None else np.broadcast_to(np.asarray(k_t_true, float), (3,))
    solver = ChainSolver(geom, sigma)
    out = []
    while len(out) < n:
        r = workspace_radius * np.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * np.pi)
        x = np.array([r * np.cos(a), r * np.sin(a), rng.uniform(-phi_max, phi_max)])
        q = inverse_kinematics(x, sigma, geom)
        label = BODY_LABELS[rng.integers(len(BODY_LABELS))]
        if label == "MP":
            loc = ContactLocation.platform()
        else:
            loc = ContactLocation.from_label(label)
            length = geom.link_length(loc.chain, loc.link)
            loc = ContactLocation(loc.chain, loc.link, (rng.uniform(0.2, 1.0) * length, 0.0))
        F_link = np.array([*rng.normal(0.0, force_scale, 2), 0.0])
        _, J_c_x, J_c_qa = contact_jacobians(loc, q, x, geom)
        tau = J_c_qa.T @ F_link
        current = tau / k_true
        if current_noise_std > 0:
            current = current + rng.normal(0.0, current_noise_std, 3)
        J_qa_x = ChainSolver.active_map(solver.solve(x))
        out.append(CalibrationSample(current, tau, label, J_c_x.T @ F_link, J_qa_x))
    return out


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

CALIBRATION_COLUMNS = ["body", "i_1", "i_2", "i_3", "tau_1", "tau_2", "tau_3"]
REPORT_COLUMNS = ["axis", "k_t", "rmse", "n_samples"]


def read_calibration_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in CALIBRATION_COLUMNS):
            raise SchemaMismatch(f"{path}: expected columns {CALIBRATION_COLUMNS}")
        samples = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                samples.append(CalibrationSample(
                    [float(rec[f"i_{k}"]) for k in (1, 2, 3)],
                    [float(rec[f"tau_{k}"]) for k in (1, 2, 3)],
                    rec["body"],
                ))
            except (TypeError, ValueError) as exc:
                raise SchemaMismatch(f"{path}: line {lineno}: {exc}") from None
    return samples


def write_calibration_csv(samples, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CALIBRATION_COLUMNS)
        for s in samples:
            w.writerow([s.label, *map(repr, map(float, s.current)), *map(repr, map(float, s.tau_ext))])


def write_fit_report(fit, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for a in range(3):
            w.writerow([a + 1, repr(float(fit.k_t[a])), repr(float(fit.rmse[a])), fit.n_samples])
