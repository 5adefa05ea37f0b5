"""Closed-chain kinematics of the planar 3-RRR parallel robot.

Conventions
-----------
Each chain ``i`` has a base anchor ``A_i``, an actuated base joint with absolute
link angle ``qa_i``, a passive elbow with relative angle ``qp_i`` and a coupling
joint ``qc_i`` to the platform, so that the distal link angle is ``qa_i + qp_i``
and the platform angle satisfies ``qa_i + qp_i + qc_i = phi``.  The full joint
vector is ordered chain-major: ``q = [qa_0, qp_0, qc_0, qa_1, ...]``.

Poses ``x = [r_x, r_y, phi_z]`` are plain numpy arrays.  Functions that take a
pose accept a leading batch dimension only where documented.
"""
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NoConvergence,
    PlatformSingular,
    SingularChain,
    Unreachable,
    WorkingModeMismatch,
)

SINGULAR_DET = 1e-10
ACTIVE_ROWS = (0, 3, 6)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def rot(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def _perp(v):
    # k x v for planar vectors, works on (..., 2)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass
class Geometry:
    """Planar 3-RRR geometry.  All lengths in metres."""

    base_anchor: np.ndarray
    platform_coupling_local: np.ndarray
    link_len_1: np.ndarray
    link_len_2: np.ndarray
    link_half_width: float = 0.02

    def __post_init__(self):
        self.base_anchor = np.asarray(self.base_anchor, dtype=float).reshape(3, 2)
        self.platform_coupling_local = np.asarray(
            self.platform_coupling_local, dtype=float
        ).reshape(3, 2)
        self.link_len_1 = np.broadcast_to(np.asarray(self.link_len_1, dtype=float), (3,)).copy()
        self.link_len_2 = np.broadcast_to(np.asarray(self.link_len_2, dtype=float), (3,)).copy()
        if np.any(self.link_len_1 <= 0) or np.any(self.link_len_2 <= 0):
            raise ValueError("link lengths must be positive")
        for i in range(3):
            for j in range(i + 1, 3):
                if np.allclose(self.base_anchor[i], self.base_anchor[j]):
                    raise ValueError(f"base anchors {i} and {j} coincide")
        if self.link_half_width < 0:
            raise ValueError("link_half_width must be non-negative")

    @classmethod
    def symmetric(cls, base_radius=0.35, platform_radius=0.10,
                  angles_deg=(90.0, 210.0, 330.0), l1=0.25, l2=0.25,
                  link_half_width=0.02):
        ang = np.deg2rad(np.asarray(angles_deg, dtype=float))
        ring = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return cls(base_radius * ring, platform_radius * ring, l1, l2, link_half_width)

    def link_length(self, chain, link):
        return self.link_len_1[chain] if link == 1 else self.link_len_2[chain]


@dataclass
class JointConfig:
    """Active, passive and coupling angles of all chains plus the working mode."""

    qa: np.ndarray
    qp: np.ndarray
    qc: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.qa = np.asarray(self.qa, dtype=float)
        self.qp = np.asarray(self.qp, dtype=float)
        self.qc = np.asarray(self.qc, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not np.all(np.abs(self.sigma) == 1.0):
            raise ValueError(f"sigma entries must be +-1, got {self.sigma}")

    @property
    def q(self):
        return np.stack([self.qa, self.qp, self.qc], axis=-1).reshape(-1)

    @classmethod
    def from_q(cls, q, sigma):
        q = np.asarray(q, dtype=float).reshape(3, 3)
        return cls(q[:, 0], q[:, 1], q[:, 2], sigma)


@dataclass
class ContactLocation:
    """A point fixed in the frame of one body of the robot.

    ``link`` is 1 (proximal) or 2 (distal) of chain ``chain``, or 0 for the
    mobile platform (``chain`` is then ignored).  ``offset`` is given in the
    body frame: for links the x axis runs along the link from its proximal
    joint, for the platform the frame is the platform pose frame.
    """

    chain: int = 0
    link: int = 0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float).reshape(2)
        if self.link not in (0, 1, 2):
            raise ValueError(f"link index must be 0 (platform), 1 or 2, got {self.link}")
        if self.link != 0 and self.chain not in (0, 1, 2):
            raise ValueError(f"chain index must be 0..2, got {self.chain}")

    @classmethod
    def platform(cls, offset=(0.0, 0.0)):
        return cls(chain=0, link=0, offset=offset)

    @classmethod
    def from_label(cls, label, offset=(0.0, 0.0)):
        """Parse ``"MP"`` or ``"C{chain}L{link}"`` with 1-based chain numbers."""
        m = re.fullmatch(r"C([123])L([12])", label.strip().upper())
        if label.strip().upper() == "MP":
            return cls.platform(offset)
        if m is None:
            raise ValueError(f"unknown body label {label!r}")
        return cls(int(m.group(1)) - 1, int(m.group(2)), offset)

    @property
    def on_platform(self):
        return self.link == 0

    @property
    def label(self):
        return "MP" if self.on_platform else f"C{self.chain + 1}L{self.link}"

    def validate(self, geom):
        if self.on_platform:
            return
        length = geom.link_length(self.chain, self.link)
        along, lateral = self.offset
        if not -1e-12 <= along <= length + 1e-12:
            raise ValueError(f"{self.label}: offset {along} m outside link length {length} m")
        if abs(lateral) > geom.link_half_width + 1e-12:
            raise ValueError(
                f"{self.label}: lateral offset {lateral} m exceeds half width "
                f"{geom.link_half_width} m"
            )


def platform_points(x, geom):
    """Coupling points ``B_i`` and rotated offsets ``R(phi) c_i`` for pose(s) ``x``."""
    x = np.asarray(x, dtype=float)
    c, s = np.cos(x[..., 2]), np.sin(x[..., 2])
    cl = geom.platform_coupling_local
    Rc = np.stack(
        [c[..., None] * cl[:, 0] - s[..., None] * cl[:, 1],
         s[..., None] * cl[:, 0] + c[..., None] * cl[:, 1]],
        axis=-1,
    )
    B = x[..., None, :2] + Rc
    return B, Rc


def _ik_angles(x, sigma, geom):
    B, Rc = platform_points(x, geom)
    d = B - geom.base_anchor
    dist2 = np.einsum("...k,...k->...", d, d)
    l1, l2 = geom.link_len_1, geom.link_len_2
    cq = (dist2 - l1 ** 2 - l2 ** 2) / (2.0 * l1 * l2)
    bad = np.abs(cq) > 1.0 + 1e-12
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        chain = int(idx[-1])
        raise Unreachable(chain, float(np.sqrt(dist2[tuple(idx)])))
    qp = np.asarray(sigma, dtype=float) * np.arccos(np.clip(cq, -1.0, 1.0))
    qa = np.arctan2(d[..., 1], d[..., 0]) - np.arctan2(l2 * np.sin(qp), l1 + l2 * np.cos(qp))
    return wrap_angle(qa), qp, B, Rc


# ---------------------------------------------------------------------------
# inverse kinematics and constraints
# ---------------------------------------------------------------------------

def inverse_kinematics(x, sigma, geom):
    """Analytic inverse kinematics for working mode ``sigma``.

    Raises
    ------
    Unreachable
        If a coupling point lies outside the annulus reachable by its chain.
    """
    x = np.asarray(x, dtype=float)
    qa, qp, _, _ = _ik_angles(x, sigma, geom)
    qc = wrap_angle(x[2] - qa - qp)
    return JointConfig(qa, qp, qc, sigma)


def full_constraints(q, x, geom):
    """Vector-loop residuals: position (2) and rotation (1) per chain."""
    x = np.asarray(x, dtype=float)
    B, _ = platform_points(x, geom)
    l1, l2 = geom.link_len_1, geom.link_len_2
    th1 = q.qa
    th2 = q.qa + q.qp
    loop = (
        geom.base_anchor
        + l1[:, None] * np.stack([np.cos(th1), np.sin(th1)], axis=-1)
        + l2[:, None] * np.stack([np.cos(th2), np.sin(th2)], axis=-1)
        - B
    )
    turn = wrap_angle(q.qa + q.qp + q.qc - x[2])
    return np.column_stack([loop, turn]).reshape(-1)


def constraint_jacobians(q, x, geom):
    """Partial derivatives of the full constraints: ``(d/dq 9x9, d/dx 9x3)``."""
    _, Rc = platform_points(x, geom)
    l1, l2 = geom.link_len_1, geom.link_len_2
    th1 = q.qa
    th2 = q.qa + q.qp
    a = l1[:, None] * np.stack([-np.sin(th1), np.cos(th1)], axis=-1)
    b = l2[:, None] * np.stack([-np.sin(th2), np.cos(th2)], axis=-1)
    Gq = np.zeros((9, 9))
    Gx = np.zeros((9, 3))
    for i in range(3):
        r = 3 * i
        Gq[r:r + 2, r] = a[i] + b[i]
        Gq[r:r + 2, r + 1] = b[i]
        Gq[r + 2, r:r + 3] = 1.0
        Gx[r:r + 2, 0:2] = -np.eye(2)
        Gx[r, 2] = Rc[i, 1]
        Gx[r + 1, 2] = -Rc[i, 0]
        Gx[r + 2, 2] = -1.0
    return Gq, Gx


def jacobian_q_x(q, x, geom):
    """Map from platform twist to all nine joint rates.

    Raises
    ------
    SingularChain
        If the constraint block of a chain is singular (stretched/folded leg).
    """
    Gq, Gx = constraint_jacobians(q, x, geom)
    for i in range(3):
        det = np.linalg.det(Gq[3 * i:3 * i + 3, 3 * i:3 * i + 3])
        if abs(det) < SINGULAR_DET:
            raise SingularChain(i, det)
    return -np.linalg.solve(Gq, Gx)


def reduced_constraints(qa, x, geom):
    """Constraints with the passive angles eliminated: ``|B_i - E_i|^2 - l2_i^2``."""
    B, _ = platform_points(x, geom)
    qa = np.asarray(qa, dtype=float)
    E = geom.base_anchor + geom.link_len_1[:, None] * np.stack([np.cos(qa), np.sin(qa)], axis=-1)
    d = B - E
    return np.einsum("ik,ik->i", d, d) - geom.link_len_2 ** 2


def reduced_jacobians(qa, x, geom):
    """``(d Gamma_red / dx  3x3, d Gamma_red / dqa  3x3 diagonal)``."""
    B, Rc = platform_points(x, geom)
    qa = np.asarray(qa, dtype=float)
    l1 = geom.link_len_1
    E = geom.base_anchor + l1[:, None] * np.stack([np.cos(qa), np.sin(qa)], axis=-1)
    d = B - E
    Rx = np.column_stack([2 * d[:, 0], 2 * d[:, 1], 2 * _cross2(Rc, d)])
    dE = l1[:, None] * np.stack([-np.sin(qa), np.cos(qa)], axis=-1)
    Rqa = np.diag(-2.0 * np.einsum("ik,ik->i", d, dE))
    return Rx, Rqa


def jacobian_x_qa(q, x, geom):
    """Map from active joint rates to platform twist.

    Raises
    ------
    PlatformSingular
        At a parallel (type II) singularity of the reduced constraints.
    """
    Rx, Rqa = reduced_jacobians(q.qa, x, geom)
    det = np.linalg.det(Rx)
    if abs(det) < SINGULAR_DET:
        raise PlatformSingular(det)
    return -np.linalg.solve(Rx, Rqa)


def jacobian_qa_x(q, x, geom):
    """Inverse of :func:`jacobian_x_qa` taken from the active rows of ``J_q,x``."""
    return jacobian_q_x(q, x, geom)[list(ACTIVE_ROWS)]


# ---------------------------------------------------------------------------
# scalar per-chain solver for the simulation hot path
# ---------------------------------------------------------------------------

class ChainSolver:
    """Inverse kinematics and loop-closure rate maps for one working mode.

    Works on Python floats; per-pose cost is a few microseconds, which the
    1 kHz loop with RK4 substeps needs.  :meth:`solve` returns one tuple per
    chain::

        (th1, th2, qp, c1, s1, c2, s2, rcx, rcy, g1, g2, inv)

    where ``g1``/``g2`` are the rows of ``d(theta1, theta2)/dx`` (absolute
    link angles) and ``inv`` is the inverse of the 2x2 loop matrix
    ``[l1 u1_perp, l2 u2_perp]`` as ``(i00, i01, i10, i11)``.
    """

    def __init__(self, geom, sigma):
        self.geom = geom
        self.sigma = tuple(float(s) for s in sigma)
        if not all(abs(s) == 1.0 for s in self.sigma):
            raise ValueError(f"sigma entries must be +-1, got {sigma}")
        self._A = [tuple(map(float, a)) for a in geom.base_anchor]
        self._c = [tuple(map(float, c)) for c in geom.platform_coupling_local]
        self._l1 = [float(v) for v in geom.link_len_1]
        self._l2 = [float(v) for v in geom.link_len_2]

    def solve(self, x, check=True):
        px, py, phi = float(x[0]), float(x[1]), float(x[2])
        cphi, sphi = math.cos(phi), math.sin(phi)
        out = []
        for i in range(3):
            cx, cy = self._c[i]
            rcx = cphi * cx - sphi * cy
            rcy = sphi * cx + cphi * cy
            ax_, ay_ = self._A[i]
            dx = px + rcx - ax_
            dy = py + rcy - ay_
            l1, l2 = self._l1[i], self._l2[i]
            d2 = dx * dx + dy * dy
            cq = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
            if cq > 1.0 + 1e-12 or cq < -1.0 - 1e-12:
                raise Unreachable(i, math.sqrt(d2))
            cq = min(1.0, max(-1.0, cq))
            qp = self.sigma[i] * math.acos(cq)
            th1 = math.atan2(dy, dx) - math.atan2(l2 * math.sin(qp), l1 + l2 * math.cos(qp))
            th2 = th1 + qp
            c1, s1 = math.cos(th1), math.sin(th1)
            c2, s2 = math.cos(th2), math.sin(th2)
            ax, ay = -l1 * s1, l1 * c1
            bx, by = -l2 * s2, l2 * c2
            det = ax * by - ay * bx
            if check and abs(det) < SINGULAR_DET:
                raise SingularChain(i, det)
            i00, i01, i10, i11 = by / det, -bx / det, -ay / det, ax / det
            g1 = (i00, i01, -i00 * rcy + i01 * rcx)
            g2 = (i10, i11, -i10 * rcy + i11 * rcx)
            out.append((th1, th2, qp, c1, s1, c2, s2, rcx, rcy, g1, g2, (i00, i01, i10, i11)))
        return out

    def active_angles(self, x):
        return np.array([wrap_angle(ch[0]) for ch in self.solve(x, check=False)])

    @staticmethod
    def active_map(chains):
        """``J_qa,x`` (3x3) from solved chains."""
        return np.array([ch[9] for ch in chains])


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def chain_coupling_point(i, qa, qp, geom):
    th1 = qa
    th2 = qa + qp
    return (geom.base_anchor[i]
            + geom.link_len_1[i] * np.array([np.cos(th1), np.sin(th1)])
            + geom.link_len_2[i] * np.array([np.cos(th2), np.sin(th2)]))


def initial_pose_estimate(qa, qp, geom):
    """Rigid fit of the platform to the coupling points of chains 0 and 1.

    Returns the pose and the distance by which chain 2's coupling point misses
    the fitted platform (a consistency measure of the measurements).
    """
    B = [chain_coupling_point(i, qa[i], qp[i], geom) for i in range(3)]
    c = geom.platform_coupling_local
    world = B[1] - B[0]
    local = c[1] - c[0]
    phi = np.arctan2(world[1], world[0]) - np.arctan2(local[1], local[0])
    phi = float(wrap_angle(phi))
    R = rot(phi)
    r = B[0] - R @ c[0]
    mismatch = float(np.linalg.norm(r + R @ c[2] - B[2]))
    return np.array([r[0], r[1], phi]), mismatch


def forward_kinematics(qa, qp, geom, sigma=None, tol=1e-10, max_iter=20, x0=None):
    """Newton-Raphson forward kinematics seeded from the measured passive angles.

    Iterates ``x <- x + J_x,qa (qa - IK(x, sigma))`` until the active-angle
    residual drops below ``tol``.  ``sigma`` defaults to the signs of ``qp``;
    when given it must agree with them.
    """
    qa = np.asarray(qa, dtype=float)
    qp = np.asarray(qp, dtype=float)
    measured = np.where(qp >= 0.0, 1.0, -1.0)
    if sigma is None:
        sigma = measured
    else:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma != measured):
            raise WorkingModeMismatch(
                f"passive angles {qp} disagree with working mode {sigma}"
            )
    if x0 is None:
        x0, _ = initial_pose_estimate(qa, qp, geom)
    solver = ChainSolver(geom, sigma)
    x = np.array(x0, dtype=float)
    res = np.inf
    for it in range(max_iter + 1):
        try:
            chains = solver.solve(x)
        except Unreachable as exc:
            raise NoConvergence(it) from exc
        err = wrap_angle(qa - np.array([ch[0] for ch in chains]))
        res = float(np.max(np.abs(err)))
        if res < tol:
            x[2] = wrap_angle(x[2])
            return x
        if it == max_iter:
            break
        J_qa_x = ChainSolver.active_map(chains)
        det = np.linalg.det(J_qa_x)
        if abs(det) < SINGULAR_DET:
            raise PlatformSingular(det)
        x = x + np.linalg.solve(J_qa_x, err)
    raise NoConvergence(max_iter, res)


# ---------------------------------------------------------------------------
# arbitrary contact locations
# ---------------------------------------------------------------------------

def _joint_column(p, s, sign=1.0):
    return sign * np.array([-(p[1] - s[1]), p[0] - s[0], 1.0])


def _chain_points(q, geom):
    """Base, elbow and coupling point of every chain from joint angles only."""
    th1 = q.qa
    th2 = q.qa + q.qp
    E = geom.base_anchor + geom.link_len_1[:, None] * np.stack([np.cos(th1), np.sin(th1)], axis=-1)
    B = E + geom.link_len_2[:, None] * np.stack([np.cos(th2), np.sin(th2)], axis=-1)
    return geom.base_anchor, E, B, th1, th2


def _platform_via(k, q, geom):
    _, _, B, _, th2 = _chain_points(q, geom)
    phi = th2[k] + q.qc[k]
    origin = B[k] - rot(phi) @ geom.platform_coupling_local[k]
    return origin, phi


def contact_point_pose(loc, q, geom):
    """Pose ``(x, y, angle)`` of the body-fixed contact frame from the serial chain."""
    A, E, _, th1, th2 = _chain_points(q, geom)
    if loc.on_platform:
        origin, phi = _platform_via(0, q, geom)
    elif loc.link == 1:
        origin, phi = A[loc.chain], th1[loc.chain]
    else:
        origin, phi = E[loc.chain], th2[loc.chain]
    p = origin + rot(phi) @ loc.offset
    return np.array([p[0], p[1], phi])


def contact_jacobian_q(loc, q, geom, route=None):
    """Jacobian of the contact pose w.r.t. the nine joint angles (3x9).

    With ``route=None`` the serial chain carrying the contact is used, so only
    that chain's columns are populated (platform contacts go through chain 0).
    With ``route=j`` for a link contact on chain ``i != j`` the pose is reached
    from the base through chain ``j``, across the platform and back down chain
    ``i``, which couples the columns of both chains.
    """
    A, E, B, _, _ = _chain_points(q, geom)
    p = contact_point_pose(loc, q, geom)[:2]
    J = np.zeros((3, 9))
    own = 0 if loc.on_platform else loc.chain
    if loc.on_platform or route is None or route == own:
        k = own
        J[:, 3 * k] = _joint_column(p, A[k])
        if loc.on_platform or loc.link == 2:
            J[:, 3 * k + 1] = _joint_column(p, E[k])
        if loc.on_platform:
            J[:, 3 * k + 2] = _joint_column(p, B[k])
        return J
    j, i = route, loc.chain
    J[:, 3 * j] = _joint_column(p, A[j])
    J[:, 3 * j + 1] = _joint_column(p, E[j])
    J[:, 3 * j + 2] = _joint_column(p, B[j])
    J[:, 3 * i + 2] = _joint_column(p, B[i], -1.0)
    if loc.link == 1:
        J[:, 3 * i + 1] = _joint_column(p, E[i], -1.0)
    return J


def contact_jacobians(loc, q, x, geom, route=None):
    """``(J_xC,q, J_xC,x, J_xC,qa)`` for a contact location.

    The platform and actuator maps are composed from the joint map through
    ``J_q,x`` and ``J_x,qa``.
    """
    J_c_q = contact_jacobian_q(loc, q, geom, route)
    J_c_x = J_c_q @ jacobian_q_x(q, x, geom)
    J_c_qa = J_c_x @ jacobian_x_qa(q, x, geom)
    return J_c_q, J_c_x, J_c_qa
