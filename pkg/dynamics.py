"""Hamiltonian flow maps and the structural checks on one-step integrators."""

import math
from abc import ABC, abstractmethod

import numpy as np

from models import (
    ContractViolation, DiagonalGaussianTarget, DoubleWell2D, NonFiniteStateError,
    PhaseState, as_vector, check_dim)

# Finite-difference step of jacobian_determinant.
JACOBIAN_STEP = 1e-6

# Slack when turning a duration into a whole number of Verlet steps.
STEP_COUNT_SLACK = 1e-9


##############################################################################
# Array kernels used by the chains


def rotate(sigmas, q, p, t):
    """Exact harmonic flow on raw arrays, componentwise angle t / sigma_i."""

    angle = t / sigmas
    c = np.cos(angle)
    s = np.sin(angle)
    return c * q + sigmas * s * p, c * p - (s / sigmas) * q


def verlet_kernel(target, q, p, grad, dt):
    """One velocity Verlet step from (q, p) given grad = grad Phi(q).

    Returns (q1, p1, grad Phi(q1)); exactly one gradient evaluation.
    """

    q1 = q + dt * p - (0.5 * dt * dt) * grad
    grad1 = target.gradient(q1)
    p1 = p - (0.5 * dt) * (grad + grad1)
    return q1, p1, grad1


def verlet_leg(target, q, p, grad, t, dt):
    """Compose Verlet steps of length dt up to elapsed time t exactly.

    Takes ceil(t / dt) steps; the last one is shortened so the total is t.
    """

    if t <= 0:
        return q, p, grad
    if grad is None:
        grad = target.gradient(q)

    n_steps = max(1, math.ceil(t / dt - STEP_COUNT_SLACK))
    last = t - (n_steps - 1) * dt
    if isinstance(target, DoubleWell2D):
        return _double_well_leg(q, p, grad, n_steps, dt, last)

    for _ in range(n_steps - 1):
        q, p, grad = verlet_kernel(target, q, p, grad, dt)
    return verlet_kernel(target, q, p, grad, last)


def _double_well_leg(q, p, grad, n_steps, dt, last):
    """verlet_leg on DoubleWell2D, on Python floats.

    Performs the same floating-point operations as repeated verlet_kernel
    calls, without the per-step array overhead.
    """

    gradient_at = DoubleWell2D.gradient_at
    x1, x2 = float(q[0]), float(q[1])
    v1, v2 = float(p[0]), float(p[1])
    g1, g2 = float(grad[0]), float(grad[1])

    for k in range(n_steps):
        h = dt if k < n_steps - 1 else last
        half_h, half_h2 = 0.5 * h, 0.5 * h * h

        x1 = x1 + h * v1 - half_h2 * g1
        x2 = x2 + h * v2 - half_h2 * g2
        n1, n2 = gradient_at(x1, x2)
        v1 = v1 - half_h * (g1 + n1)
        v2 = v2 - half_h * (g2 + n2)
        g1, g2 = n1, n2

    return np.array([x1, x2]), np.array([v1, v2]), np.array([g1, g2])


def _finite_state(q, p, what):
    if not (np.isfinite(q).all() and np.isfinite(p).all()):
        raise NonFiniteStateError(f"{what} produced a non-finite state")
    return PhaseState(q, p)


##############################################################################
# Flow maps


class FlowMap(ABC):
    """A map (z, t) -> z(t) approximating the Hamiltonian flow of `target`."""

    target = None

    @abstractmethod
    def advance(self, q, p, t, grad=None):
        """Advance raw arrays by time t; returns (q, p, grad-or-None).

        `grad` is grad Phi(q) when the caller has it; maps that integrate
        numerically return the gradient at the new position for reuse.
        """

    def __call__(self, z, t):
        check_dim(self.target, z.position, "z")
        if t < 0:
            raise ContractViolation(f"flow duration must be non-negative, got {t!r}")

        q, p, _ = self.advance(z.position, z.momentum, t)
        return _finite_state(q, p, self.__class__.__name__)


class ExactGaussianFlow(FlowMap):
    """Closed-form flow for a DiagonalGaussianTarget (a rotation per component)."""

    def __init__(self, target):
        if not isinstance(target, DiagonalGaussianTarget):
            raise ContractViolation("the exact flow needs a diagonal Gaussian target")
        self.target = target
        self.sigmas = target.sigmas

    def __repr__(self):
        return f"<ExactGaussianFlow sigmas={self.sigmas.tolist()}>"

    def advance(self, q, p, t, grad=None):
        if t == 0:
            return q, p, grad
        q, p = rotate(self.sigmas, q, p, t)
        return q, p, None


class VerletFlow(FlowMap):
    """Velocity Verlet with step dt for any target, gradient cached between legs."""

    def __init__(self, target, dt):
        if not dt > 0:
            raise ContractViolation(f"Verlet step must be positive, got {dt!r}")
        self.target = target
        self.dt = dt

    def __repr__(self):
        return f"<VerletFlow {self.target.name} dt={self.dt}>"

    def advance(self, q, p, t, grad=None):
        return verlet_leg(self.target, q, p, grad, t, self.dt)


##############################################################################
# Operations on phase states


def exact_gaussian_flow(sigmas, z, t):
    """Rotate each (q_i, p_i) pair by angle t / sigma_i."""

    sigmas = as_vector(sigmas, "sigmas")
    if z.position.shape != sigmas.shape:
        raise ContractViolation(
            f"state has dimension {z.dim} but {sigmas.size} sigmas were given")
    if t < 0:
        raise ContractViolation(f"flow duration must be non-negative, got {t!r}")
    if t == 0:
        return z

    q, p = rotate(sigmas, z.position, z.momentum, t)
    return PhaseState(q, p)


def verlet_step(target, z, dt, grad=None):
    """One Verlet step of length dt. Pass `grad` = grad Phi(q) to reuse it."""

    check_dim(target, z.position, "z")
    if not dt > 0:
        raise ContractViolation(f"Verlet step must be positive, got {dt!r}")

    if grad is None:
        grad = target.gradient(z.position)
    q, p, _ = verlet_kernel(target, z.position, z.momentum, grad, dt)
    return _finite_state(q, p, "verlet_step")


def verlet_flow(target, z, t, dt):
    """Verlet approximation of the flow over exactly t time units."""

    check_dim(target, z.position, "z")
    if t < 0:
        raise ContractViolation(f"flow duration must be non-negative, got {t!r}")
    if not dt > 0:
        raise ContractViolation(f"Verlet step must be positive, got {dt!r}")
    if t == 0:
        return z

    q, p, _ = verlet_leg(target, z.position, z.momentum, None, t, dt)
    return _finite_state(q, p, "verlet_flow")


def momentum_flip(z):
    """(q, p) -> (q, -p)."""

    return PhaseState(z.position, -z.momentum)


def reversibility_defect(target, z, dt, step_map=None):
    """Max-norm of (theta o F o theta o F)(z) - z, F the momentum flip.

    `step_map(z, dt)` defaults to one Verlet step; any FlowMap instance also
    fits the signature.
    """

    if step_map is None:
        def step_map(w, h):
            return verlet_step(target, w, h)

    w = step_map(momentum_flip(z), dt)
    w = step_map(momentum_flip(w), dt)

    return float(max(
        np.max(np.abs(w.position - z.position)),
        np.max(np.abs(w.momentum - z.momentum)),
    ))


def jacobian_determinant(target, z, dt, eps=JACOBIAN_STEP):
    """det of the central-difference Jacobian of one Verlet step at z."""

    check_dim(target, z.position, "z")
    dim = target.dim
    point = np.concatenate([z.position, z.momentum])

    def step(x):
        grad = target.gradient(x[:dim])
        q1, p1, _ = verlet_kernel(target, x[:dim], x[dim:], grad, dt)
        return np.concatenate([q1, p1])

    jacobian = np.empty((2 * dim, 2 * dim))
    for j in range(2 * dim):
        shift = np.zeros(2 * dim)
        shift[j] = eps
        jacobian[:, j] = (step(point + shift) - step(point - shift)) / (2 * eps)

    return float(np.linalg.det(jacobian))
