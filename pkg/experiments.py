"""Experiment runners behind the command line.

Each runner takes a validated ExperimentConfig, fans grid points or replicas
out to worker processes with fixed stream indices, sorts the results and
writes one CSV from a single writer.
"""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np

from analysis import (
    drift_verify, hmc_resonance, iac_estimate, iac_hmc_formula, iac_rhmc_formula,
    msd_estimate, msd_hmc_formula, msd_rhmc_formula)
from dynamics import ExactGaussianFlow, VerletFlow
from models import (
    HALF_PI, DegenerateVarianceError, DiagonalGaussianTarget, DoubleWell2D,
    PhaseState, SamplerConfig)
from samplers import (
    RandomSource, hmc_chain, hmc_metropolis_chain, jump_counts, rhmc_chain,
    stationary_state, time_average, variant1_chain, variant2_chain)

logger = logging.getLogger(__name__)

SWEEP_CSV_HEADERS = [
    "scenario", "sampler", "lambda", "component_index", "statistic_name",
    "empirical_value", "analytic_value", "n_samples", "seed", "window", "flag",
]
DRIFT_CSV_HEADERS = ["time", "mean_V", "replica_stderr"]
VARIANT_BIAS_CSV_HEADERS = ["h", "time_weighted_q2", "bias", "n_events"]

AGGREGATE = -1

DOUBLE_WELL_START = DoubleWell2D.MINIMA[0]

# Default far-away starting coordinate of drift checks.
DRIFT_START = {"doublewell2d": 6.0}
DRIFT_START_GAUSSIAN = 10.0


def format_real(value):
    """17 significant digits; empty for missing values."""

    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(float(value), ".17g")


@dataclass(frozen=True)
class SweepRecord:
    """One CSV row of a lambda sweep."""

    scenario: str
    sampler: str
    lam: float
    component_index: int
    statistic_name: str
    empirical_value: Optional[float]
    analytic_value: Optional[float]
    n_samples: int
    seed: int
    window: Optional[int] = None
    flag: str = ""

    def sort_key(self):
        return (self.lam, self.component_index, self.statistic_name)

    def as_row(self):
        return {
            "scenario": self.scenario,
            "sampler": self.sampler,
            "lambda": format_real(self.lam),
            "component_index": self.component_index,
            "statistic_name": self.statistic_name,
            "empirical_value": format_real(self.empirical_value),
            "analytic_value": format_real(self.analytic_value),
            "n_samples": self.n_samples,
            "seed": self.seed,
            "window": "" if self.window is None else self.window,
            "flag": self.flag,
        }


##############################################################################
# Scenario plumbing


def build_target(config):
    sigmas = config.target_sigmas
    if sigmas is None:
        return DoubleWell2D()
    return DiagonalGaussianTarget(sigmas)


def build_flow(config, target):
    """Exact flow for Gaussian scenarios, Verlet at step_length otherwise."""

    if config.is_gaussian:
        return ExactGaussianFlow(target)
    return VerletFlow(target, config.step_length)


def initial_state(config, target, rng):
    """Stationary draw for Gaussians; the (2, 1) minimum with fresh momentum otherwise."""

    if config.is_gaussian:
        return stationary_state(target, rng)
    return PhaseState(DOUBLE_WELL_START, rng.normal(target.dim))


def sampler_config(config, lam, step_length=None):
    return SamplerConfig(
        mean_duration=lam,
        horowitz_angle=config.horowitz_angle,
        step_length=config.step_length if step_length is None else step_length,
        seed=config.seed,
    )


def run_chain(config, target, lam, n, z0, rng):
    """Run the configured chain sampler for n steps or events."""

    if config.sampler == "hmc":
        return hmc_chain(target, build_flow(config, target), lam, n, z0.position, rng)
    if config.sampler == "hmc-metropolis":
        return hmc_metropolis_chain(target, lam, config.step_length, n, z0.position, rng)
    if config.sampler == "rhmc":
        return rhmc_chain(target, build_flow(config, target), sampler_config(config, lam), n, z0, rng)
    raise ValueError(f"{config.sampler} does not produce a chain")


def _map(func, items, workers):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def write_csv(path, headers, rows):
    """RFC 4180 CSV, UTF-8, LF line endings, header first."""

    with open(path, "w", newline="", encoding="utf-8") as out:
        writer = csv.DictWriter(out, fieldnames=headers, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


##############################################################################
# sweep


def _sweep_point(config, task):
    index, lam = task
    rng = RandomSource(config.seed, index)
    target = build_target(config)
    z0 = initial_state(config, target, rng)

    chain = run_chain(config, target, lam, config.burn_in + config.n_samples, z0, rng)
    positions = chain.positions[config.burn_in:]
    logger.info("sweep %s/%s: lambda=%g done", config.scenario, config.sampler, lam)

    sigmas = config.target_sigmas
    hmc_like = config.sampler in ("hmc", "hmc-metropolis")
    complete_refresh = abs(config.horowitz_angle - HALF_PI) <= 1e-12

    def record(component, statistic, empirical, analytic, window=None, flag=""):
        return SweepRecord(
            config.scenario, config.sampler, lam, component, statistic,
            empirical, analytic, config.n_samples, config.seed, window, flag)

    if sigmas is None:
        observables = {AGGREGATE: DoubleWell2D.well_projection(positions)}
    else:
        observables = {i + 1: positions[:, i] for i in range(len(sigmas))}

    records = []
    any_resonant = False
    for component, series in observables.items():
        analytic, flag = None, ""
        if sigmas is not None:
            sigma = sigmas[component - 1]
            if config.sampler == "rhmc" and complete_refresh:
                analytic = iac_rhmc_formula(sigma, lam)
            elif config.sampler == "hmc":
                analytic = iac_hmc_formula(sigma, lam)
            if hmc_like and hmc_resonance(sigma, lam):
                flag = "resonant"
                any_resonant = True
                logger.warning("lambda=%g is resonant for sigma=%g", lam, sigma)

        try:
            estimate = iac_estimate(series)
            records.append(record(component, "iac", estimate.value, analytic, estimate.window, flag))
        except DegenerateVarianceError:
            records.append(record(component, "iac", None, analytic, None, flag or "degenerate"))

    msd_analytic = None
    if sigmas is not None:
        if config.sampler == "rhmc":
            msd_analytic = msd_rhmc_formula(sigmas, lam)
        elif config.sampler == "hmc":
            msd_analytic = msd_hmc_formula(sigmas, lam)
    records.append(record(
        AGGREGATE, "msd", msd_estimate(positions), msd_analytic,
        flag="resonant" if any_resonant else ""))

    if sigmas is None:
        occupancy = float(np.mean(DoubleWell2D.well_projection(positions) > 0))
        records.append(record(AGGREGATE, "occupancy", occupancy, 0.5))

    return records


def run_sweep(config):
    """IAC per tracked observable and MSD for every lambda; writes the CSV."""

    tasks = list(enumerate(config.lambda_grid))
    chunks = _map(partial(_sweep_point, config), tasks, config.workers)

    records = sorted((r for chunk in chunks for r in chunk), key=SweepRecord.sort_key)
    write_csv(config.output_path, SWEEP_CSV_HEADERS, (r.as_row() for r in records))
    return records


##############################################################################
# drift-check


def drift_start(config):
    dim = config.dimension
    q0 = config.q0
    if q0 is None:
        q0 = (DRIFT_START.get(config.scenario, DRIFT_START_GAUSSIAN),) * dim
    p0 = config.p0 if config.p0 is not None else (0.0,) * dim
    return PhaseState(q0, p0)


def run_drift_check(config):
    """Replica mean of V over time from a far start; writes the CSV."""

    target = build_target(config)
    lam = config.lambda_grid[0]
    curve = drift_verify(
        target, build_flow(config, target), sampler_config(config, lam),
        drift_start(config), config.horizon, config.replicas,
        RandomSource(config.seed, 0), workers=config.workers)

    rows = (
        {"time": format_real(t), "mean_V": format_real(v), "replica_stderr": format_real(e)}
        for t, v, e in zip(curve.times, curve.mean_v, curve.stderr)
    )
    write_csv(config.output_path, DRIFT_CSV_HEADERS, rows)
    return curve


##############################################################################
# variant-bias


def _second_moment(positions, momenta):
    return positions[:, 0] ** 2


def _variant_point(config, task):
    index, h = task
    rng = RandomSource(config.seed, index)
    target = build_target(config)
    cfg = sampler_config(config, config.lambda_grid[0], step_length=h)
    chain = variant2_chain if config.sampler == "variant2" else variant1_chain

    path = chain(target, cfg, config.n_samples, stationary_state(target, rng), rng)
    q2 = time_average(path, _second_moment, path.final_time, vectorized=True)
    logger.info("%s h=%g: E q^2 = %g, jumps %s", config.sampler, h, q2, jump_counts(path))
    return h, q2


def run_variant_bias(config):
    """Time-weighted E q^2 and its deviation from 1 for every h; writes the CSV."""

    tasks = list(enumerate(config.h_grid))
    results = sorted(_map(partial(_variant_point, config), tasks, config.workers))

    rows = [
        {"h": format_real(h), "time_weighted_q2": format_real(q2),
         "bias": format_real(q2 - 1.0), "n_events": config.n_samples}
        for h, q2 in results
    ]
    write_csv(config.output_path, VARIANT_BIAS_CSV_HEADERS, rows)
    return results


##############################################################################
# sample


def run_sample(config):
    """Raw dump t, q_1..q_D, p_1..p_D, H at the first lambda of the grid."""

    target = build_target(config)
    lam = config.lambda_grid[0]
    rng = RandomSource(config.seed, 0)
    z0 = initial_state(config, target, rng)
    n = config.n_samples

    if config.sampler in ("variant1", "variant2"):
        chain = variant2_chain if config.sampler == "variant2" else variant1_chain
        path = chain(target, sampler_config(config, lam), n, z0, rng)
        times, positions, momenta = path.times, path.positions, path.momenta
    else:
        out = run_chain(config, target, lam, n, z0, rng)
        if config.sampler == "rhmc":
            times = np.concatenate([[0.0], out.jump_times])
        else:
            times = lam * np.arange(n + 1)
        positions = np.vstack([z0.position, out.positions])
        momenta = np.vstack([z0.momentum, out.momenta])

    dim = target.dim
    headers = (["t"] + [f"q_{i}" for i in range(1, dim + 1)]
               + [f"p_{i}" for i in range(1, dim + 1)] + ["H"])

    def rows():
        for t, q, p in zip(times, positions, momenta):
            energy = 0.5 * float(np.dot(p, p)) + target.potential(q)
            values = [t, *q, *p, energy]
            yield dict(zip(headers, (format_real(v) for v in values)))

    write_csv(config.output_path, headers, rows())
    return len(times)
