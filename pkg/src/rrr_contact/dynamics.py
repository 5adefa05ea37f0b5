"""Operational-space dynamics of the closed chain.

The platform pose ``x`` is the minimal coordinate.  Every chain is treated as
a two-link serial subsystem in its absolute link angles ``theta = (qa, qa+qp)``
with a 2x2 inertia ``H(theta)`` (the coupling joint is a massless hinge).  The
loop closure gives ``dtheta = G(x) dx`` and the subsystems are projected onto
the platform coordinates::

    M_x = M_platform(x) + sum_i G_i^T H_i G_i

``c_x`` is obtained either from central differences of ``M_x`` (Christoffel
form, also providing the factor ``C_x``) or analytically from the chain
accelerations at zero platform acceleration.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import NotSPD, PlatformSingular
from .kinematics import SINGULAR_DET, ChainSolver, contact_jacobians

FD_STEP = 1e-6


@dataclass
class DynamicsParams:
    """Inertial and friction parameters.

    ``link_mass``, ``link_inertia`` have shape (3, 2) indexed ``[chain, link-1]``;
    ``link_com`` has shape (3, 2, 2) with COM offsets in the link frame.
    Inertias are about the COM.  Friction acts on the active joints: viscous
    ``viscous * dq`` plus a tanh-smoothed Coulomb level
    ``coulomb * tanh(dq / coulomb_eps)``.
    """

    link_mass: np.ndarray
    link_com: np.ndarray
    link_inertia: np.ndarray
    platform_mass: float
    platform_inertia: float
    platform_com: np.ndarray = field(default_factory=lambda: np.zeros(2))
    viscous: np.ndarray = field(default_factory=lambda: np.zeros(3))
    coulomb: np.ndarray = field(default_factory=lambda: np.zeros(3))
    coulomb_eps: float = 1e-3
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.link_mass = np.broadcast_to(np.asarray(self.link_mass, float), (3, 2)).copy()
        self.link_com = np.broadcast_to(np.asarray(self.link_com, float), (3, 2, 2)).copy()
        self.link_inertia = np.broadcast_to(np.asarray(self.link_inertia, float), (3, 2)).copy()
        self.platform_com = np.asarray(self.platform_com, float).reshape(2)
        self.viscous = np.broadcast_to(np.asarray(self.viscous, float), (3,)).copy()
        self.coulomb = np.broadcast_to(np.asarray(self.coulomb, float), (3,)).copy()
        self.gravity = np.asarray(self.gravity, float).reshape(2)
        self.platform_mass = float(self.platform_mass)
        self.platform_inertia = float(self.platform_inertia)
        if np.any(self.link_mass < 0) or self.platform_mass <= 0:
            raise ValueError("masses must be positive")
        if np.any(self.link_inertia < 0) or self.platform_inertia <= 0:
            raise ValueError("inertias must be positive")
        if np.any(self.viscous < 0) or np.any(self.coulomb < 0):
            raise ValueError("friction coefficients must be non-negative")
        if self.coulomb_eps <= 0:
            raise ValueError("coulomb_eps must be positive")

    @classmethod
    def default(cls, geom, link_mass=0.5, platform_mass=1.0, platform_radius=0.1,
                viscous=(0.05, 0.06, 0.055), coulomb=(0.02, 0.025, 0.022),
                coulomb_eps=1e-3, gravity=(0.0, 0.0)):
        """Slender-rod links with the COM at mid-length and a disc platform."""
        lengths = np.stack([geom.link_len_1, geom.link_len_2], axis=-1)
        masses = np.broadcast_to(np.asarray(link_mass, float), (3, 2)).copy()
        com = np.zeros((3, 2, 2))
        com[..., 0] = lengths / 2.0
        return cls(
            link_mass=masses,
            link_com=com,
            link_inertia=masses * lengths ** 2 / 12.0,
            platform_mass=float(platform_mass),
            platform_inertia=0.5 * platform_mass * platform_radius ** 2,
            viscous=viscous,
            coulomb=coulomb,
            coulomb_eps=coulomb_eps,
            gravity=gravity,
        )

    def scaled_masses(self, factor):
        return replace(
            self,
            link_mass=self.link_mass * factor,
            link_inertia=self.link_inertia * factor,
            platform_mass=self.platform_mass * factor,
            platform_inertia=self.platform_inertia * factor,
        )


@dataclass
class OperationalDynamics:
    """Dynamics terms at one state.  ``J_qa_x`` maps the twist to active rates."""

    M: np.ndarray
    C: np.ndarray
    c: np.ndarray
    g: np.ndarray
    F_fr: np.ndarray
    J_qa_x: np.ndarray


@dataclass
class ModelError:
    """Fractional errors applied to each estimated term (0 = perfect model)."""

    mass: float = 0.0
    coriolis: float = 0.0
    gravity: float = 0.0
    friction: float = 0.0


def _cho(M):
    try:
        return scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise NotSPD(f"mass matrix not positive definite:\n{M}") from exc


def christoffel_matrix(dM, xdot):
    """Coriolis factor from ``dM[k, i, j] = dM_ij/dx_k``; ``dM/dt - 2C`` is skew."""
    return 0.5 * (
        np.einsum("kij,k->ij", dM, xdot)
        + np.einsum("jik,k->ij", dM, xdot)
        - np.einsum("ijk,k->ij", dM, xdot)
    )


class RobotModel:
    """Geometry, parameters and working mode bundled for repeated evaluation.

    ``error`` perturbs the returned terms of :meth:`terms` and is meant for the
    controller/observer copy of the model; the plant uses :meth:`acceleration`
    which ignores it.
    """

    def __init__(self, geom, params, sigma, error=None):
        self.geom = geom
        self.params = params
        self.sigma = np.asarray(sigma, dtype=float)
        self.error = error or ModelError()
        self.solver = ChainSolver(geom, sigma)
        p = params
        self._chain_consts = []
        for i in range(3):
            l1 = float(geom.link_len_1[i])
            l2 = float(geom.link_len_2[i])
            m1, m2 = float(p.link_mass[i, 0]), float(p.link_mass[i, 1])
            (a1, b1), (a2, b2) = p.link_com[i, 0], p.link_com[i, 1]
            h11 = m1 * (a1 * a1 + b1 * b1) + float(p.link_inertia[i, 0]) + m2 * l1 * l1
            h22 = m2 * (a2 * a2 + b2 * b2) + float(p.link_inertia[i, 1])
            self._chain_consts.append(
                (l1, l2, m1, m2, float(a1), float(b1), float(a2), float(b2), h11, h22)
            )
        self._mP = p.platform_mass
        self._IP = p.platform_inertia
        self._sP = (float(p.platform_com[0]), float(p.platform_com[1]))
        self._grav = (float(p.gravity[0]), float(p.gravity[1]))
        self._has_gravity = bool(np.any(p.gravity))
        self._visc = [float(v) for v in p.viscous]
        self._coul = [float(v) for v in p.coulomb]
        self._eps = float(p.coulomb_eps)

    def with_error(self, error):
        return RobotModel(self.geom, self.params, self.sigma, error)

    # -- core evaluation -------------------------------------------------

    def _evaluate(self, x, xdot=None, chains=None):
        """Return ``(M, c, g, F_fr, J_qa_x)``; ``c`` etc. are None without ``xdot``."""
        if chains is None:
            chains = self.solver.solve(x)
        phi = float(x[2])
        cphi, sphi = math.cos(phi), math.sin(phi)
        sPx = cphi * self._sP[0] - sphi * self._sP[1]
        sPy = sphi * self._sP[0] + cphi * self._sP[1]
        mP = self._mP
        M = [[mP, 0.0, -mP * sPy],
             [0.0, mP, mP * sPx],
             [-mP * sPy, mP * sPx, self._IP + mP * (sPx * sPx + sPy * sPy)]]
        dyn = xdot is not None
        if dyn:
            xd0, xd1, xd2 = float(xdot[0]), float(xdot[1]), float(xdot[2])
            w2p = xd2 * xd2
            c = [-mP * w2p * sPx, -mP * w2p * sPy, 0.0]
            F_fr = [0.0, 0.0, 0.0]
        gx, gy = self._grav
        g = [-mP * gx, -mP * gy, -mP * (-gx * sPy + gy * sPx)] if self._has_gravity else None
        for i, ch in enumerate(chains):
            th1, th2, qp, c1, s1, c2, s2, rcx, rcy, g1, g2, inv = ch
            l1, l2, m1, m2, a1, b1, a2, b2, h11, h22 = self._chain_consts[i]
            cd = c1 * c2 + s1 * s2
            sd = s2 * c1 - c2 * s1
            h12 = m2 * l1 * (a2 * cd - b2 * sd)
            for j in range(3):
                gj1, gj2 = g1[j], g2[j]
                row = M[j]
                for k in range(3):
                    row[k] += (h11 * gj1 * g1[k] + h12 * (gj1 * g2[k] + gj2 * g1[k])
                               + h22 * gj2 * g2[k])
            if dyn:
                w1 = g1[0] * xd0 + g1[1] * xd1 + g1[2] * xd2
                w2 = g2[0] * xd0 + g2[1] * xd1 + g2[2] * xd2
                rx = l1 * c1 * w1 * w1 + l2 * c2 * w2 * w2 - w2p * rcx
                ry = l1 * s1 * w1 * w1 + l2 * s2 * w2 * w2 - w2p * rcy
                dd1 = inv[0] * rx + inv[1] * ry
                dd2 = inv[2] * rx + inv[3] * ry
                dh12 = -m2 * l1 * (a2 * sd + b2 * cd)
                f1 = h11 * dd1 + h12 * dd2 + dh12 * w2 * w2
                f2 = h12 * dd1 + h22 * dd2 - dh12 * w1 * w1
                tau = self._visc[i] * w1 + self._coul[i] * math.tanh(w1 / self._eps)
                for k in range(3):
                    c[k] += g1[k] * f1 + g2[k] * f2
                    F_fr[k] += g1[k] * tau
            if g is not None:
                s1x, s1y = a1 * c1 - b1 * s1, a1 * s1 + b1 * c1
                s2x, s2y = a2 * c2 - b2 * s2, a2 * s2 + b2 * c2
                dv1 = -(m1 * (-gx * s1y + gy * s1x) + m2 * l1 * (-gx * s1 + gy * c1))
                dv2 = -(m2 * (-gx * s2y + gy * s2x))
                for k in range(3):
                    g[k] += dv1 * g1[k] + dv2 * g2[k]
        J_qa_x = np.array([ch[9] for ch in chains])
        M = np.array(M)
        g = np.array(g) if g is not None else np.zeros(3)
        if dyn:
            return M, np.array(c), g, np.array(F_fr), J_qa_x
        return M, None, g, None, J_qa_x

    # -- public evaluation -------------------------------------------------

    def mass(self, x):
        return self._evaluate(x)[0]

    def mass_partials(self, x, step=FD_STEP):
        """``M(x)`` and central-difference partials ``dM[k, i, j] = dM_ij/dx_k``."""
        x = np.asarray(x, dtype=float)
        M0 = self.mass(x)
        dM = np.empty((3, 3, 3))
        for k in range(3):
            xp = x.copy()
            xm = x.copy()
            xp[k] += step
            xm[k] -= step
            dM[k] = (self.mass(xp) - self.mass(xm)) / (2.0 * step)
        return M0, dM

    def terms(self, x, xdot, coriolis="fd"):
        """Evaluate ``M_x, C_x, c_x, g_x, F_fr,x`` at ``(x, xdot)``.

        ``coriolis="fd"`` builds ``C_x`` from central differences of ``M_x``
        and sets ``c_x = C_x xdot``.  ``"analytic"`` evaluates ``c_x`` from the
        chain accelerations and leaves ``C`` as NaN.
        """
        x = np.asarray(x, dtype=float)
        xdot = np.asarray(xdot, dtype=float)
        M, c, g, F_fr, J_qa_x = self._evaluate(x, xdot)
        if coriolis == "fd":
            _, dM = self.mass_partials(x)
            C = christoffel_matrix(dM, xdot)
            c = C @ xdot
        elif coriolis == "analytic":
            C = np.full((3, 3), np.nan)
        else:
            raise ValueError(f"unknown coriolis mode {coriolis!r}")
        err = self.error
        return OperationalDynamics(
            M=M * (1.0 + err.mass),
            C=C * (1.0 + err.coriolis),
            c=c * (1.0 + err.coriolis),
            g=g * (1.0 + err.gravity),
            F_fr=F_fr * (1.0 + err.friction),
            J_qa_x=J_qa_x,
        )

    def acceleration(self, x, xdot, F_m, F_ext):
        """True-model forward dynamics used by the plant integrator."""
        M, c, g, F_fr, _ = self._evaluate(x, xdot)
        return np.linalg.solve(M, F_m + F_ext - c - g - F_fr)

    def acceleration_from_torque(self, x, xdot, tau, F_ext):
        """Plant acceleration with actuator torques held (mapped at the current pose)."""
        M, c, g, F_fr, J_qa_x = self._evaluate(x, xdot)
        return np.linalg.solve(M, J_qa_x.T @ tau + F_ext - c - g - F_fr)

    def active_map(self, x):
        return ChainSolver.active_map(self.solver.solve(x))

    def potential_energy(self, x):
        p = self.params
        gvec = p.gravity
        if not np.any(gvec):
            return 0.0
        V = 0.0
        x = np.asarray(x, float)
        for i, ch in enumerate(self.solver.solve(x)):
            th1, th2 = ch[0], ch[1]
            A = self.geom.base_anchor[i]
            u1 = np.array([math.cos(th1), math.sin(th1)])
            p1 = A + _rotate(th1, p.link_com[i, 0])
            p2 = A + self.geom.link_len_1[i] * u1 + _rotate(th2, p.link_com[i, 1])
            V -= p.link_mass[i, 0] * gvec @ p1 + p.link_mass[i, 1] * gvec @ p2
        pP = x[:2] + _rotate(x[2], p.platform_com)
        return V - p.platform_mass * gvec @ pP

    def energy(self, x, xdot):
        xdot = np.asarray(xdot, float)
        return 0.5 * xdot @ self.mass(x) @ xdot + self.potential_energy(x)


def _rotate(th, v):
    c, s = math.cos(th), math.sin(th)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------

def _model(q, geom, params):
    return RobotModel(geom, params, q.sigma)


def mass_matrix_x(q, x, geom, params):
    """Symmetric positive-definite operational-space inertia matrix."""
    return _model(q, geom, params).mass(x)


def coriolis_vector_x(q, x, xdot, geom, params, step=FD_STEP):
    """``(c_x, C_x)`` with ``c_x = dM/dt xdot - 1/2 d(xdot^T M xdot)/dx``.

    Partial derivatives of ``M_x`` are central differences with ``step``;
    ``C_x`` is the Christoffel factor, so ``dM/dt = C_x + C_x^T``.
    """
    xdot = np.asarray(xdot, dtype=float)
    _, dM = _model(q, geom, params).mass_partials(x, step)
    C = christoffel_matrix(dM, xdot)
    return C @ xdot, C


def velocity_product_x(q, x, xdot, geom, params):
    """Analytic ``c_x`` from the chain accelerations at zero platform acceleration."""
    return _model(q, geom, params)._evaluate(np.asarray(x, float), np.asarray(xdot, float))[1]


def gravity_x(q, x, geom, params):
    """Gradient of the potential energy w.r.t. the platform pose."""
    return _model(q, geom, params)._evaluate(np.asarray(x, float))[2]


def joint_friction(qa_dot, params):
    qa_dot = np.asarray(qa_dot, dtype=float)
    return params.viscous * qa_dot + params.coulomb * np.tanh(qa_dot / params.coulomb_eps)


def friction_x(q, x, xdot, geom, params):
    """Active-joint friction mapped to the platform: ``J_x,qa^-T tau_fr``."""
    return _model(q, geom, params)._evaluate(np.asarray(x, float), np.asarray(xdot, float))[3]


def inverse_dynamics(q, x, xdot, xddot, F_ext, geom, params):
    """Actuation force ``F_m = M xdd + c + g + F_fr - F_ext``."""
    model = _model(q, geom, params)
    t = model.terms(x, xdot)
    return t.M @ np.asarray(xddot, float) + t.c + t.g + t.F_fr - np.asarray(F_ext, float)


def forward_dynamics(q, x, xdot, F_m, F_ext, geom, params):
    """Platform acceleration, solved with a Cholesky factorisation of ``M_x``."""
    t = _model(q, geom, params).terms(x, xdot)
    rhs = np.asarray(F_m, float) + np.asarray(F_ext, float) - t.c - t.g - t.F_fr
    return scipy.linalg.cho_solve(_cho(t.M), rhs)


def actuator_to_platform(tau, q, x, geom):
    """Platform force equivalent to actuator torques: ``F = J_x,qa^-T tau``."""
    J_qa_x = ChainSolver.active_map(ChainSolver(geom, q.sigma).solve(x))
    det = np.linalg.det(J_qa_x)
    if abs(det) < SINGULAR_DET:
        raise PlatformSingular(det)
    return J_qa_x.T @ np.asarray(tau, float)


def platform_to_actuator(F, q, x, geom):
    """Actuator torques producing platform force ``F``: ``tau = J_x,qa^T F``."""
    J_qa_x = ChainSolver.active_map(ChainSolver(geom, q.sigma).solve(x))
    return np.linalg.solve(J_qa_x.T, np.asarray(F, float))


def project_link_wrench(loc, F_link, q, x, geom):
    """Project a planar wrench acting at a contact location.

    Returns ``(F_ext, tau_ext) = (J_xC,x^T F_link, J_xC,qa^T F_link)``.
    """
    F_link = np.asarray(F_link, float)
    _, J_c_x, J_c_qa = contact_jacobians(loc, q, x, geom)
    return J_c_x.T @ F_link, J_c_qa.T @ F_link
