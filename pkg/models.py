"""Phase-space states, target distributions and sampler settings."""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

HALF_PI = 0.5 * math.pi

MAX_SEED = 2 ** 64 - 1

# Central-difference step used by gradient_check.
FD_STEP = 1e-5


##############################################################################
# Errors


class SamplingError(Exception):
    """Base class for every error raised by the sampling library."""


class ContractViolation(SamplingError, ValueError):
    """An operation was called outside its precondition."""


class NonFiniteStateError(SamplingError, ArithmeticError):
    """A chain produced a NaN or infinite coordinate.

    `index` is the last event whose state was still finite (-1 if the very
    first event failed).
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateVarianceError(SamplingError, ValueError):
    """A series handed to an estimator has zero sample variance."""


def as_vector(values, name="vector"):
    """Return `values` as a fresh 1-D float64 array."""

    vector = np.array(values, dtype=float).reshape(-1)
    if vector.size == 0:
        raise ContractViolation(f"{name} must have at least one entry")
    return vector


def check_dim(target, vector, name="q"):
    """Raise ContractViolation unless `vector` has the target's dimension."""

    if vector.shape != (target.dim,):
        raise ContractViolation(
            f"{name} has shape {vector.shape}, {target.name} expects ({target.dim},)")


##############################################################################
# Phase space


@dataclass(frozen=True, eq=False)
class PhaseState:
    """A point z = (q, p) of phase space.

    Both arrays are copied on construction and made read-only, so a state can
    be shared freely between chains and worker processes.
    """

    position: np.ndarray
    momentum: np.ndarray

    def __post_init__(self):
        position = as_vector(self.position, "position")
        momentum = as_vector(self.momentum, "momentum")

        if position.shape != momentum.shape:
            raise ContractViolation(
                f"position has length {position.size} but momentum has "
                f"length {momentum.size}")

        if not (np.isfinite(position).all() and np.isfinite(momentum).all()):
            raise NonFiniteStateError("phase state has non-finite entries")

        position.flags.writeable = False
        momentum.flags.writeable = False
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "momentum", momentum)

    def __repr__(self):
        return f"<PhaseState q={self.position.tolist()} p={self.momentum.tolist()}>"

    @property
    def dim(self):
        return self.position.size

    def with_momentum(self, momentum):
        """Same position, new momentum."""

        return PhaseState(self.position, momentum)


##############################################################################
# Targets


class TargetModel(ABC):
    """A target density proportional to exp(-potential(q)) on R^dim.

    Subclasses implement `potential` and `gradient` on 1-D float arrays of
    length `dim` without checking shapes; the module-level functions of the
    same names do the checking.
    """

    name = "target"
    dim = 1

    @abstractmethod
    def potential(self, q):
        """Return Phi(q)."""

    @abstractmethod
    def gradient(self, q):
        """Return grad Phi(q) as a new array."""

    def __repr__(self):
        return f"<{self.__class__.__name__} {self.name} dim={self.dim}>"


class DiagonalGaussianTarget(TargetModel):
    """Centred Gaussian with independent components of standard deviation sigma_i.

    Phi(q) = sum q_i^2 / (2 sigma_i^2). Phi >= 0 everywhere and grows
    quadratically, so the drift hypotheses on the potential hold.
    """

    name = "diagonal-gaussian"

    def __init__(self, sigmas):
        sigmas = as_vector(sigmas, "sigmas")
        if not (np.isfinite(sigmas).all() and (sigmas > 0).all()):
            raise ContractViolation("sigmas must be finite and strictly positive")

        sigmas.flags.writeable = False
        self.sigmas = sigmas
        self.dim = sigmas.size
        self._precision = 1.0 / sigmas ** 2

    def __repr__(self):
        return f"<DiagonalGaussianTarget sigmas={self.sigmas.tolist()}>"

    @property
    def precisions(self):
        """1 / sigma_i^2, read-only."""

        precision = self._precision.view()
        precision.flags.writeable = False
        return precision

    def potential(self, q):
        return 0.5 * float(np.dot(self._precision, q * q))

    def gradient(self, q):
        return self._precision * q

    def sample_positions(self, rng, size=None):
        """Exact draws from N(0, diag(sigma^2)) using a RandomSource."""

        shape = (self.dim,) if size is None else (size, self.dim)
        return self.sigmas * rng.normal(shape)


class DoubleWell2D(TargetModel):
    """Phi(x1, x2) = 5 (x2^2 - 1)^2 + 1.25 (x2 - x1/2)^2.

    Minima at (2, 1) and (-2, -1) with Phi = 0, saddle at the origin.
    Phi >= 0 and the potential is symmetric under q -> -q.
    """

    name = "double-well-2d"
    dim = 2

    MINIMA = ((2.0, 1.0), (-2.0, -1.0))
    SADDLE = (0.0, 0.0)

    def potential(self, q):
        x1, x2 = float(q[0]), float(q[1])
        bend = x2 * x2 - 1.0
        tilt = x2 - 0.5 * x1
        return 5.0 * bend * bend + 1.25 * tilt * tilt

    def gradient(self, q):
        return np.array(self.gradient_at(float(q[0]), float(q[1])))

    @staticmethod
    def gradient_at(x1, x2):
        """grad Phi as a pair of floats."""

        tilt = x2 - 0.5 * x1
        return -1.25 * tilt, 20.0 * x2 * (x2 * x2 - 1.0) + 2.5 * tilt

    @staticmethod
    def well_projection(q):
        """Observable 2 x1 + x2; its sign tells which well q sits in.

        Accepts a single position or an (n, 2) array of positions.
        """

        q = np.asarray(q, dtype=float)
        return 2.0 * q[..., 0] + q[..., 1]


def potential(target, q):
    """Phi(q), with a dimension check."""

    q = as_vector(q, "q")
    check_dim(target, q)
    return target.potential(q)


def gradient(target, q):
    """grad Phi(q), with a dimension check."""

    q = as_vector(q, "q")
    check_dim(target, q)
    return target.gradient(q)


def hamiltonian(target, z):
    """H(q, p) = |p|^2 / 2 + Phi(q)."""

    check_dim(target, z.position, "z")
    return 0.5 * float(np.dot(z.momentum, z.momentum)) + target.potential(z.position)


def gradient_check(target, q, step=FD_STEP):
    """Largest relative error between gradient(q) and central differences.

    Errors are scaled by max(1, |grad Phi(q)|_inf) so stationary points do not
    divide by zero.
    """

    q = as_vector(q, "q")
    check_dim(target, q)

    analytic = target.gradient(q)
    numeric = np.empty_like(analytic)
    for i in range(target.dim):
        shift = np.zeros_like(q)
        shift[i] = step
        numeric[i] = (target.potential(q + shift) - target.potential(q - shift)) / (2 * step)

    scale = max(1.0, float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - numeric))) / scale


##############################################################################
# Sampler settings


def check_angle(angle):
    """Raise ContractViolation unless 0 < angle <= pi/2."""

    if not (0.0 < angle <= HALF_PI + 1e-12):
        raise ContractViolation(
            f"horowitz angle must lie in (0, pi/2], got {angle!r}; "
            "angle 0 never refreshes the momentum")


@dataclass(frozen=True)
class SamplerConfig:
    """Mean duration lambda, Horowitz angle phi, step length h and seed."""

    mean_duration: float
    horowitz_angle: float = HALF_PI
    step_length: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.mean_duration) and self.mean_duration > 0):
            raise ContractViolation(
                f"mean duration must be positive, got {self.mean_duration!r}")

        check_angle(self.horowitz_angle)

        if not (math.isfinite(self.step_length) and self.step_length > 0):
            raise ContractViolation(
                f"step length must be positive, got {self.step_length!r}")

        if not (0 <= self.seed <= MAX_SEED):
            raise ContractViolation(f"seed must fit in 64 unsigned bits, got {self.seed!r}")

    @property
    def mean_holding_time(self):
        """Mean holding time h lambda / (h + lambda) of the jump variants."""

        h, lam = self.step_length, self.mean_duration
        return h * lam / (h + lam)

    @property
    def randomize_probability(self):
        """Chance h / (h + lambda) that a variant jump refreshes the momentum."""

        h, lam = self.step_length, self.mean_duration
        return h / (h + lam)
