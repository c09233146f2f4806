"""HMC, randomized-duration HMC and the two jump-process variants.

Random numbers are consumed per event in a fixed order: the duration (or
holding time) uniform first, then the branch uniform, then the normal vector.
Every chain owns one RandomSource, so identical seeds give bit-identical
output.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from dynamics import verlet_kernel, verlet_leg
from models import (
    HALF_PI, ContractViolation, DiagonalGaussianTarget, NonFiniteStateError,
    PhaseState, as_vector, check_angle, check_dim)

logger = logging.getLogger(__name__)


##############################################################################
# Randomness


class RandomSource:
    """Seeded PCG64 stream addressed by (master seed, stream index).

    Children share the master seed and extend the spawn key, so replica and
    grid-point streams are independent of each other and of the parent.
    """

    def __init__(self, seed, index=0, parent_key=()):
        self.seed = int(seed)
        self.index = int(index)
        self.key = tuple(parent_key) + (self.index,)

        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self):
        return f"<RandomSource seed={self.seed} key={self.key}>"

    def child(self, index):
        """Independent sub-stream number `index`."""

        return RandomSource(self.seed, index, self.key)

    def uniform(self):
        """Uniform draw on (0, 1]."""

        return 1.0 - self.generator.random()

    def uniforms(self, size):
        return 1.0 - self.generator.random(size)

    def normal(self, shape):
        """Standard normal draws of the given shape."""

        return self.generator.standard_normal(shape)


def exponential_from_uniform(mean, u):
    """Inverse CDF of the exponential distribution: -mean * ln(u)."""

    return -mean * math.log(u)


def draw_duration(mean, rng):
    """Exponential duration with the given mean."""

    if not mean > 0:
        raise ContractViolation(f"mean duration must be positive, got {mean!r}")
    return exponential_from_uniform(mean, rng.uniform())


def refresh_coefficients(angle):
    """(cos phi, sin phi), exactly (0, 1) for complete refreshment."""

    check_angle(angle)
    if abs(angle - HALF_PI) <= 1e-15:
        return 0.0, 1.0
    return math.cos(angle), math.sin(angle)


def momentum_randomize(z, angle, rng):
    """Gamma(q, p) = (q, cos(phi) p + sin(phi) xi), xi ~ N(0, 1)^D."""

    c, s = refresh_coefficients(angle)
    xi = rng.normal(z.dim)
    return PhaseState(z.position, c * z.momentum + s * xi)


def stationary_state(target, rng):
    """Exact Boltzmann-Gibbs draw: q from the target, then p ~ N(0, 1)^D."""

    if not isinstance(target, DiagonalGaussianTarget):
        raise ContractViolation(
            f"exact stationary draws need a diagonal Gaussian target, got {target.name}")

    q = target.sample_positions(rng)
    p = rng.normal(target.dim)
    return PhaseState(q, p)


def metropolis_ratio(target, z, h):
    """alpha_h = min(1, exp(H(z) - H(theta_h z))) for one Verlet step."""

    check_dim(target, z.position, "z")
    q, p = z.position, z.momentum
    grad = target.gradient(q)
    q1, p1, _ = verlet_kernel(target, q, p, grad, h)

    energy = 0.5 * float(np.dot(p, p)) + target.potential(q)
    energy1 = 0.5 * float(np.dot(p1, p1)) + target.potential(q1)
    return math.exp(min(0.0, energy - energy1))


##############################################################################
# Chain containers


@dataclass(frozen=True, eq=False)
class ChainOutput:
    """Recorded states of a chain.

    `positions[i]` and `momenta[i]` are the state after event i + 1;
    `jump_times` is empty for fixed-duration HMC; `acceptance_count` is only
    set by the Metropolis-adjusted sampler.
    """

    positions: np.ndarray
    momenta: np.ndarray
    jump_times: np.ndarray
    acceptance_count: Optional[int] = None

    def __len__(self):
        return self.positions.shape[0]

    @property
    def acceptance_rate(self):
        if self.acceptance_count is None or len(self) == 0:
            return None
        return self.acceptance_count / len(self)


class JumpKind(enum.IntEnum):
    """What produced a jump of a variant chain."""

    RANDOMIZE = 0
    INTEGRATE = 1
    FLIP = 2

    @property
    def label(self):
        return self.name.lower()


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Piecewise-constant path: state i holds on [times[i], times[i + 1]).

    `times`, `positions` and `momenta` include the initial state at index 0;
    `kinds[i]` is the kind of the jump into state i + 1. Flip chains also
    store the Metropolis ratio of each integrate-or-flip decision in
    `metropolis_ratios` (NaN where the momentum was refreshed instead).
    """

    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    kinds: np.ndarray
    metropolis_ratios: Optional[np.ndarray] = None

    def __len__(self):
        return self.times.size

    @property
    def final_time(self):
        return float(self.times[-1])

    def state(self, i):
        return PhaseState(self.positions[i], self.momenta[i])

    @property
    def states(self):
        return [self.state(i) for i in range(len(self))]

    def holding_weights(self, horizon):
        """min(T, t_{i+1}) - min(T, t_i) for every state, the last held forever."""

        if not horizon > 0:
            raise ContractViolation(f"horizon must be positive, got {horizon!r}")
        if horizon > self.final_time:
            raise ContractViolation(
                f"horizon {horizon} is beyond the path's last jump at {self.final_time}")

        clipped = np.minimum(self.times, horizon)
        ends = np.append(clipped[1:], horizon)
        return ends - clipped


class JumpCounts(NamedTuple):
    randomize: int
    integrate: int
    flip: int
    mean_holding_time: float


def jump_counts(path):
    """Number of jumps of each kind and the mean holding time."""

    counts = np.bincount(path.kinds, minlength=len(JumpKind))
    holding = float(np.mean(np.diff(path.times))) if len(path) > 1 else math.nan
    return JumpCounts(
        int(counts[JumpKind.RANDOMIZE]),
        int(counts[JumpKind.INTEGRATE]),
        int(counts[JumpKind.FLIP]),
        holding,
    )


def time_average(path, f, horizon, vectorized=False):
    """(1 / T) * integral over [0, T] of f along the path.

    `f` takes a PhaseState; with `vectorized=True` it takes the (n, D)
    position and momentum arrays and returns n values.
    """

    weights = path.holding_weights(horizon)
    used = np.flatnonzero(weights)

    if vectorized:
        values = np.asarray(f(path.positions[used], path.momenta[used]), dtype=float)
    else:
        values = np.array([f(path.state(i)) for i in used], dtype=float)

    return float(np.dot(values, weights[used])) / horizon


##############################################################################
# Samplers


def _non_finite(index, sampler):
    return NonFiniteStateError(
        f"{sampler} produced a non-finite state at event {index}; "
        f"last valid event index is {index - 1}",
        index=index - 1)


def _check_finite(q, p, index, sampler):
    if not (np.isfinite(q).all() and np.isfinite(p).all()):
        raise _non_finite(index, sampler)


def _check_count(n, what):
    if n < 0:
        raise ContractViolation(f"{what} must be non-negative, got {n!r}")


def hmc_chain(target, flow, duration, n_steps, x0, rng):
    """Fixed-duration HMC with complete momentum refreshment and no rejection."""

    x0 = as_vector(x0, "x0")
    check_dim(target, x0, "x0")
    _check_count(n_steps, "n_steps")
    if not duration > 0:
        raise ContractViolation(f"duration must be positive, got {duration!r}")

    dim = target.dim
    positions = np.empty((n_steps, dim))
    momenta = np.empty((n_steps, dim))

    q, grad = x0, None
    for i in range(n_steps):
        p = rng.normal(dim)
        q, p, grad = flow.advance(q, p, duration, grad)
        _check_finite(q, p, i, "hmc")
        positions[i] = q
        momenta[i] = p

    logger.debug("hmc: %d steps of duration %g", n_steps, duration)
    return ChainOutput(positions, momenta, np.empty(0))


def hmc_metropolis_chain(target, duration, dt, n_steps, x0, rng, dt_range=None):
    """HMC with a Verlet proposal and a Metropolis accept/reject step.

    With `dt_range=(dt_min, dt_max)` each proposal draws its step length
    uniformly from that interval (drawn after the momentum, before the
    acceptance uniform).
    """

    x0 = as_vector(x0, "x0")
    check_dim(target, x0, "x0")
    _check_count(n_steps, "n_steps")
    if not duration > 0:
        raise ContractViolation(f"duration must be positive, got {duration!r}")
    if not dt > 0:
        raise ContractViolation(f"Verlet step must be positive, got {dt!r}")
    if dt_range is not None:
        dt_min, dt_max = dt_range
        if not 0 < dt_min <= dt_max:
            raise ContractViolation(f"step range must satisfy 0 < min <= max, got {dt_range!r}")

    dim = target.dim
    positions = np.empty((n_steps, dim))
    momenta = np.empty((n_steps, dim))
    accepted = 0

    q = x0
    grad = target.gradient(q)
    phi = target.potential(q)
    for i in range(n_steps):
        xi = rng.normal(dim)
        h = dt if dt_range is None else dt_min + (dt_max - dt_min) * (1.0 - rng.uniform())

        q1, p1, grad1 = verlet_leg(target, q, xi, grad, duration, h)
        _check_finite(q1, p1, i, "hmc-metropolis")
        phi1 = target.potential(q1)

        log_ratio = (0.5 * float(np.dot(xi, xi)) + phi) - (0.5 * float(np.dot(p1, p1)) + phi1)
        if math.log(rng.uniform()) <= log_ratio:
            q, grad, phi = q1, grad1, phi1
            momenta[i] = p1
            accepted += 1
        else:
            momenta[i] = xi
        positions[i] = q

    logger.debug("hmc-metropolis: accepted %d of %d proposals", accepted, n_steps)
    return ChainOutput(positions, momenta, np.empty(0), accepted)


def rhmc_chain(target, flow, cfg, n_events, z0, rng):
    """Randomized HMC: exponential durations, partial momentum refreshment.

    Records the jump times t_i and the states right after each refreshment.
    """

    check_dim(target, z0.position, "z0")
    _check_count(n_events, "n_events")

    dim = target.dim
    positions = np.empty((n_events, dim))
    momenta = np.empty((n_events, dim))
    times = np.empty(n_events)
    c, s = refresh_coefficients(cfg.horowitz_angle)
    mean = cfg.mean_duration

    q, p, grad = z0.position, z0.momentum, None
    clock = 0.0
    for i in range(n_events):
        dt = exponential_from_uniform(mean, rng.uniform())
        q, p, grad = flow.advance(q, p, dt, grad)
        clock += dt
        p = c * p + s * rng.normal(dim)
        _check_finite(q, p, i, "rhmc")

        times[i] = clock
        positions[i] = q
        momenta[i] = p

    logger.debug("rhmc: %d events, final time %g", n_events, clock)
    return ChainOutput(positions, momenta, times)


def _array_jumps(target, cfg, n_events, z0, rng, with_flips, sampler):
    dim = target.dim
    times = np.empty(n_events + 1)
    positions = np.empty((n_events + 1, dim))
    momenta = np.empty((n_events + 1, dim))
    kinds = np.empty(n_events, dtype=np.int8)
    ratios = np.full(n_events, np.nan) if with_flips else None

    h, lam = cfg.step_length, cfg.mean_duration
    holding = cfg.mean_holding_time
    randomize_below = cfg.randomize_probability
    c, s = refresh_coefficients(cfg.horowitz_angle)

    q, p = z0.position, z0.momentum
    grad = target.gradient(q)
    phi = target.potential(q)
    clock = 0.0
    times[0], positions[0], momenta[0] = clock, q, p

    for i in range(n_events):
        clock += exponential_from_uniform(holding, rng.uniform())
        u = rng.uniform()

        if u <= randomize_below:
            p = c * p + s * rng.normal(dim)
            kinds[i] = JumpKind.RANDOMIZE
        else:
            q1, p1, grad1 = verlet_kernel(target, q, p, grad, h)
            _check_finite(q1, p1, i, sampler)

            if with_flips:
                phi1 = target.potential(q1)
                energy = 0.5 * float(np.dot(p, p)) + phi
                energy1 = 0.5 * float(np.dot(p1, p1)) + phi1
                alpha = math.exp(min(0.0, energy - energy1))
                ratios[i] = alpha
                if u <= (h + alpha * lam) / (h + lam):
                    q, p, grad, phi = q1, p1, grad1, phi1
                    kinds[i] = JumpKind.INTEGRATE
                else:
                    p = -p
                    kinds[i] = JumpKind.FLIP
            else:
                q, p, grad = q1, p1, grad1
                kinds[i] = JumpKind.INTEGRATE

        times[i + 1] = clock
        positions[i + 1] = q
        momenta[i + 1] = p

    return times, positions, momenta, kinds, ratios


def _line_jumps(target, cfg, n_events, z0, rng, with_flips, sampler):
    """The jump loop for a one-dimensional Gaussian, on Python floats.

    Consumes the same draws in the same order as `_array_jumps` and applies
    the same floating-point operations, so both loops give the same path.
    """

    times = np.empty(n_events + 1)
    positions = np.empty(n_events + 1)
    momenta = np.empty(n_events + 1)
    kinds = np.empty(n_events, dtype=np.int8)
    ratios = np.full(n_events, np.nan) if with_flips else None

    h, lam = cfg.step_length, cfg.mean_duration
    half_h, half_h2 = 0.5 * h, 0.5 * h * h
    flip_scale = h + lam
    holding = cfg.mean_holding_time
    randomize_below = cfg.randomize_probability
    c, s = refresh_coefficients(cfg.horowitz_angle)
    precision = float(target.precisions[0])

    randomize, integrate, flip = int(JumpKind.RANDOMIZE), int(JumpKind.INTEGRATE), int(JumpKind.FLIP)
    random = rng.generator.random
    normal = rng.generator.standard_normal
    log, exp, isfinite = math.log, math.exp, math.isfinite

    q, p = float(z0.position[0]), float(z0.momentum[0])
    grad = precision * q
    phi = 0.5 * (precision * (q * q))
    clock = 0.0
    times[0], positions[0], momenta[0] = clock, q, p

    for i in range(n_events):
        clock += -holding * log(1.0 - random())
        u = 1.0 - random()

        if u <= randomize_below:
            p = c * p + s * normal()
            kinds[i] = randomize
        else:
            q1 = q + h * p - half_h2 * grad
            grad1 = precision * q1
            p1 = p - half_h * (grad + grad1)
            if not (isfinite(q1) and isfinite(p1)):
                raise _non_finite(i, sampler)

            if with_flips:
                phi1 = 0.5 * (precision * (q1 * q1))
                alpha = exp(min(0.0, (0.5 * (p * p) + phi) - (0.5 * (p1 * p1) + phi1)))
                ratios[i] = alpha
                if u <= (h + alpha * lam) / flip_scale:
                    q, p, grad, phi = q1, p1, grad1, phi1
                    kinds[i] = integrate
                else:
                    p = -p
                    kinds[i] = flip
            else:
                q, p, grad = q1, p1, grad1
                kinds[i] = integrate

        times[i + 1] = clock
        positions[i + 1] = q
        momenta[i + 1] = p

    return times, positions[:, None], momenta[:, None], kinds, ratios


def _jump_chain(target, cfg, n_events, z0, rng, with_flips):
    check_dim(target, z0.position, "z0")
    _check_count(n_events, "n_events")

    sampler = "variant2" if with_flips else "variant1"
    if isinstance(target, DiagonalGaussianTarget) and target.dim == 1:
        run = _line_jumps
    else:
        run = _array_jumps

    path = JumpPath(*run(target, cfg, n_events, z0, rng, with_flips, sampler))
    logger.debug("%s: %d jumps, counts %s", sampler, n_events, jump_counts(path))
    return path


def variant1_chain(target, cfg, n_events, z0, rng):
    """Jump process that refreshes momentum or takes one Verlet step of length h."""

    return _jump_chain(target, cfg, n_events, z0, rng, with_flips=False)


def variant2_chain(target, cfg, n_events, z0, rng):
    """variant1_chain plus Metropolis-weighted momentum flips; keeps exp(-H) invariant."""

    return _jump_chain(target, cfg, n_events, z0, rng, with_flips=True)
