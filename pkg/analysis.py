"""Sampling-quality diagnostics and the closed forms for Gaussian targets.

Empirical side: integrated autocorrelation time, mean-squared displacement,
weighted Kolmogorov-Smirnov distance, the Lyapunov drift curve. Analytic side:
IAC and MSD of RHMC and HMC on diagonal Gaussians, the efficiency-optimal
mean duration, and the generator applied to the Lyapunov function.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from dynamics import momentum_flip
from models import (
    ContractViolation, DegenerateVarianceError, as_vector, check_angle, check_dim)
from samplers import exponential_from_uniform, refresh_coefficients

logger = logging.getLogger(__name__)

# Sokal window constant: the window W must reach WINDOW_FACTOR times the
# running autocorrelation time.
WINDOW_FACTOR = 5.0

MIN_SERIES_LENGTH = 100

DRIFT_GRID_POINTS = 50

LIOUVILLE_STEP = 1e-6


##############################################################################
# Autocorrelation


@dataclass(frozen=True)
class IacEstimate:
    """Integrated autocorrelation time with its truncation window."""

    value: float
    window: int
    n: int
    stderr: float


def autocorrelation(series):
    """Normalized autocorrelation rho_0..rho_{n-1} via zero-padded FFT."""

    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < 2:
        raise ContractViolation("autocorrelation needs at least two samples")
    if np.all(x == x[0]):
        raise DegenerateVarianceError("series is constant")

    n = x.size
    centred = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centred, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / n

    if not acov[0] > 0:
        raise DegenerateVarianceError("series has zero sample variance")
    return acov / acov[0]


def iac_estimate(series, window_factor=WINDOW_FACTOR):
    """IAC = 1 + 2 sum_{j=1}^{W} rho_j with a self-consistent Sokal window.

    W is the smallest lag with W >= window_factor * (1 + 2 sum_{j<=W} |rho_j|).
    The absolute sum equals the IAC itself when all correlations are
    non-negative; it keeps the window wide enough for oscillating
    correlations, whose signed sum can be far below 1. The reported value is
    clipped at 0.
    """

    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < MIN_SERIES_LENGTH:
        raise ContractViolation(
            f"IAC needs at least {MIN_SERIES_LENGTH} samples, got {x.size}")

    rho = autocorrelation(x)
    n = x.size
    signed = 1.0 + 2.0 * np.cumsum(rho[1:])
    absolute = 1.0 + 2.0 * np.cumsum(np.abs(rho[1:]))
    lags = np.arange(1, n)

    consistent = np.flatnonzero(lags >= window_factor * absolute)
    if consistent.size:
        k = int(consistent[0])
    else:
        k = n - 2
        logger.warning(
            "no self-consistent IAC window within %d samples; autocorrelations "
            "do not decay (resonant or non-ergodic chain?)", n)

    window = int(lags[k])
    value = max(0.0, float(signed[k]))
    stderr = float(absolute[k]) * math.sqrt(2.0 * (2 * window + 1) / n)
    return IacEstimate(value, window, n, stderr)


def msd_estimate(positions):
    """Average squared Euclidean distance between consecutive positions."""

    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ContractViolation("MSD needs at least two positions")

    steps = np.diff(x, axis=0)
    return float(np.mean(np.sum(steps * steps, axis=1)))


##############################################################################
# Closed forms for diagonal Gaussian targets


def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ContractViolation(f"{name} must be positive, got {value!r}")


def iac_rhmc_formula(sigma, lam):
    """1 + 2 sigma^2 / lambda^2 (complete refreshment)."""

    _check_positive(sigma=sigma, lam=lam)
    return 1.0 + 2.0 * sigma ** 2 / lam ** 2


def hmc_resonance(sigma, lam, tol=1e-9):
    """True when lambda / sigma is within tol of a multiple of pi."""

    ratio = lam / sigma / math.pi
    return abs(ratio - round(ratio)) <= tol


def iac_hmc_formula(sigma, lam):
    """(1 + cos(lambda/sigma)) / (1 - cos(lambda/sigma)); +inf at even resonances."""

    _check_positive(sigma=sigma, lam=lam)
    c = math.cos(lam / sigma)
    if math.isclose(c, 1.0, rel_tol=0.0, abs_tol=1e-12):
        return math.inf
    return (1.0 + c) / (1.0 - c)


def rhmc_autocorrelation(sigma, lam, lag):
    """Lag-j position autocorrelation of RHMC: (sigma^2 / (sigma^2 + lambda^2))^j."""

    _check_positive(sigma=sigma, lam=lam)
    return (sigma ** 2 / (sigma ** 2 + lam ** 2)) ** lag


def hmc_autocorrelation(sigma, lam, lag):
    """Lag-j position autocorrelation of HMC: cos(lambda / sigma)^j."""

    _check_positive(sigma=sigma, lam=lam)
    return math.cos(lam / sigma) ** lag


def _sigmas(sigmas):
    sigmas = as_vector(sigmas, "sigmas")
    if not (sigmas > 0).all():
        raise ContractViolation("sigmas must be strictly positive")
    return sigmas


def msd_rhmc_plateau(sigmas):
    """Large-lambda limit sum 2 sigma_i^2."""

    sigmas = _sigmas(sigmas)
    return float(np.sum(2.0 * sigmas ** 2))


def msd_rhmc_formula(sigmas, lam):
    """sum 2 lambda^2 sigma_i^2 / (sigma_i^2 + lambda^2)."""

    sigmas = _sigmas(sigmas)
    _check_positive(lam=lam)
    if math.isinf(lam):
        return msd_rhmc_plateau(sigmas)

    var = sigmas ** 2
    return float(np.sum(2.0 * lam ** 2 * var / (var + lam ** 2)))


def msd_hmc_formula(sigmas, lam):
    """sum 2 (1 - cos(lambda / sigma_i)) sigma_i^2."""

    sigmas = _sigmas(sigmas)
    _check_positive(lam=lam)
    return float(np.sum(2.0 * (1.0 - np.cos(lam / sigmas)) * sigmas ** 2))


def optimal_lambda_closed_form(sigmas):
    """(sum sigma_i^4 / sum sigma_i^2)^(1/2).

    Exact maximizer of MSD/lambda when all sigma_i are equal, an approximation
    otherwise; optimal_lambda refines it.
    """

    var = _sigmas(sigmas) ** 2
    return math.sqrt(float(np.sum(var ** 2) / np.sum(var)))


def optimal_lambda(sigmas, grid_points=2001):
    """Mean duration maximizing msd_rhmc_formula(lambda) / lambda.

    The maximizer lies in [min sigma, max sigma]: every term increases below
    its own sigma and decreases above it. A log-spaced scan picks the best
    bracket, then a bounded scalar search polishes it.
    """

    sigmas = _sigmas(sigmas)
    low, high = float(sigmas.min()), float(sigmas.max())
    if low == high:
        return low

    var = sigmas ** 2

    def efficiency(lam):
        return float(np.sum(2.0 * lam * var / (var + lam ** 2)))

    grid = np.geomspace(low, high, grid_points)
    scores = 2.0 * grid[:, None] * var / (var + grid[:, None] ** 2)
    best = int(np.argmax(scores.sum(axis=1)))

    bracket = (grid[max(best - 1, 0)], grid[min(best + 1, grid_points - 1)])
    result = optimize.minimize_scalar(
        lambda lam: -efficiency(lam), bounds=bracket, method="bounded",
        options={"xatol": 1e-12})
    return float(result.x)


##############################################################################
# Distribution checks


def weighted_ks_statistic(values, weights, cdf=stats.norm.cdf):
    """Kolmogorov-Smirnov distance between a weighted sample and `cdf`."""

    values = np.asarray(values, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if values.shape != weights.shape:
        raise ContractViolation("values and weights must have the same length")
    total = weights.sum()
    if not total > 0:
        raise ContractViolation("weights must have a positive sum")

    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    upper = np.cumsum(weights[order]) / total
    lower = upper - weights[order] / total
    reference = cdf(sorted_values)
    return float(max(np.max(upper - reference), np.max(reference - lower)))


def ks_critical_value(n, alpha=0.01):
    """Asymptotic one-sample KS critical value for sample size n."""

    return float(stats.kstwobign.ppf(1.0 - alpha)) / math.sqrt(n)


##############################################################################
# Lyapunov function


@dataclass(frozen=True)
class LyapunovParams:
    """Coefficients of V(z) = H(z) + c1 <q, p> + c2 |q|^2 / 2."""

    c1: float
    c2: float
    lam: float
    angle: float

    def __post_init__(self):
        check_angle(self.angle)
        _check_positive(lam=self.lam)

        c1, c2 = self.expected(self.lam, self.angle)
        if not (math.isclose(self.c1, c1, rel_tol=1e-12) and math.isclose(self.c2, c2, rel_tol=1e-12)):
            raise ContractViolation(
                f"c1, c2 = {self.c1}, {self.c2} do not match lambda={self.lam}, "
                f"angle={self.angle} (expected {c1}, {c2})")
        if not self.c2 > self.c1 ** 2:
            raise ContractViolation("V is not positive definite: c2 <= c1^2")

    @staticmethod
    def expected(lam, angle):
        c1 = math.sin(angle) ** 2 / (4.0 * lam)
        return c1, c1 * (1.0 - math.cos(angle)) / lam

    @classmethod
    def for_sampler(cls, lam, angle):
        c1, c2 = cls.expected(lam, angle)
        return cls(c1, c2, lam, angle)

    @classmethod
    def from_config(cls, cfg):
        return cls.for_sampler(cfg.mean_duration, cfg.horowitz_angle)


def _lyapunov(target, q, p, params):
    """V at one position q and one or many momenta p (shape (D,) or (n, D))."""

    kinetic = 0.5 * np.sum(p * p, axis=-1)
    cross = params.c1 * (p @ q)
    return kinetic + target.potential(q) + cross + 0.5 * params.c2 * float(np.dot(q, q))


def lyapunov_value(target, z, params):
    """V(z) = H(z) + c1 <q, p> + c2 |q|^2 / 2."""

    check_dim(target, z.position, "z")
    return float(_lyapunov(target, z.position, z.momentum, params))


def generator_on_lyapunov(target, z, params):
    """Closed form of L V: -2 c1 (|p|^2/2 + <grad Phi, q>/2) + D sin^2(phi) / (2 lambda)."""

    check_dim(target, z.position, "z")
    q, p = z.position, z.momentum
    drift = 0.5 * float(np.dot(p, p)) + 0.5 * float(np.dot(target.gradient(q), q))
    source = target.dim * math.sin(params.angle) ** 2 / (2.0 * params.lam)
    return -2.0 * params.c1 * drift + source


def liouville_on_lyapunov(target, flow, z, params, eps=LIOUVILLE_STEP):
    """Central difference of V along the flow; the backward leg is flip o flow o flip."""

    forward = flow(z, eps)
    backward = momentum_flip(flow(momentum_flip(z), eps))
    return (lyapunov_value(target, forward, params) - lyapunov_value(target, backward, params)) / (2 * eps)


def randomization_on_lyapunov(target, z, params, n_draws, rng):
    """Monte Carlo lambda^-1 E[V(Gamma z) - V(z)]; returns (mean, standard error)."""

    check_dim(target, z.position, "z")
    if n_draws < 2:
        raise ContractViolation("need at least two draws for a standard error")

    c, s = refresh_coefficients(params.angle)
    xi = rng.normal((n_draws, target.dim))
    refreshed = c * z.momentum + s * xi

    jumps = (_lyapunov(target, z.position, refreshed, params)
             - _lyapunov(target, z.position, z.momentum, params)) / params.lam
    return float(jumps.mean()), float(jumps.std(ddof=1) / math.sqrt(n_draws))


##############################################################################
# Drift check


@dataclass(frozen=True, eq=False)
class DriftCurve:
    """Replica mean of V on a time grid, with its standard error (NaN for one replica)."""

    times: np.ndarray
    mean_v: np.ndarray
    stderr: np.ndarray
    n_replicas: int

    def pairs(self):
        return list(zip(self.times.tolist(), self.mean_v.tolist()))


def _drift_replica(task):
    flow, cfg, params, q0, p0, grid, rng = task
    target = flow.target
    c, s = refresh_coefficients(cfg.horowitz_angle)

    values = np.empty(grid.size)
    q, p, grad = q0, p0, None
    now, k = 0.0, 0
    while k < grid.size:
        jump = now + exponential_from_uniform(cfg.mean_duration, rng.uniform())
        while k < grid.size and grid[k] < jump:
            q, p, grad = flow.advance(q, p, grid[k] - now, grad)
            now = grid[k]
            values[k] = _lyapunov(target, q, p, params)
            k += 1
        if k == grid.size:
            break
        q, p, grad = flow.advance(q, p, jump - now, grad)
        now = jump
        p = c * p + s * rng.normal(target.dim)

    return values


def drift_verify(target, flow, cfg, z0, horizon, n_replicas, rng,
                 grid_points=DRIFT_GRID_POINTS, workers=1):
    """Mean of V(Z_t) over independent RHMC replicas started at z0.

    Replica i uses stream rng.child(i), so the curve does not depend on how
    replicas are spread over `workers` processes.
    """

    check_dim(target, z0.position, "z0")
    if horizon < 0:
        raise ContractViolation(f"horizon must be non-negative, got {horizon!r}")
    if n_replicas < 1:
        raise ContractViolation(f"need at least one replica, got {n_replicas!r}")

    params = LyapunovParams.from_config(cfg)
    grid = np.array([0.0]) if horizon == 0 else np.linspace(0.0, horizon, grid_points)
    tasks = [
        (flow, cfg, params, z0.position, z0.momentum, grid, rng.child(i))
        for i in range(n_replicas)
    ]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            curves = np.array(list(pool.map(_drift_replica, tasks, chunksize=16)))
    else:
        curves = np.array([_drift_replica(task) for task in tasks])

    mean_v = curves.mean(axis=0)
    # Every replica starts at z0.
    mean_v[0] = lyapunov_value(target, z0, params)
    if n_replicas > 1:
        stderr = curves.std(axis=0, ddof=1) / math.sqrt(n_replicas)
    else:
        stderr = np.full(grid.size, np.nan)

    logger.debug("drift check: %d replicas, V %g -> %g", n_replicas, mean_v[0], mean_v[-1])
    return DriftCurve(grid, mean_v, stderr, n_replicas)


def fit_decay_rate(times, mean_v, plateau):
    """Least-squares gamma in mean_v - plateau ~ A exp(-gamma t), above the plateau."""

    times = np.asarray(times, dtype=float)
    excess = np.asarray(mean_v, dtype=float) - plateau
    above = excess > 0
    if above.sum() < 2:
        raise ContractViolation("need at least two points above the plateau")

    slope, _ = np.polyfit(times[above], np.log(excess[above]), 1)
    return float(-slope)
