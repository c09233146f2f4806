"""Experiment runner tests."""

# run these tests like:
#
#    python -m unittest test_experiments.py
#
# RHMC_FULL_SCALE=1 also runs the benchmark-size sweeps (several minutes).


import math
import os
import tempfile
from dataclasses import replace
from unittest import TestCase, skipUnless

from analysis import iac_hmc_formula, iac_rhmc_formula, msd_rhmc_formula
from experiments import (
    SweepRecord, build_target, drift_start, format_real, run_drift_check,
    run_sample, run_sweep, run_variant_bias)
from forms import ExperimentConfig
from models import HALF_PI, DiagonalGaussianTarget, DoubleWell2D

FULL_SCALE = os.environ.get("RHMC_FULL_SCALE") == "1"


class ExperimentBaseTestCase(TestCase):
    def setUp(self):
        self.dir = tempfile.TemporaryDirectory()
        self.config = ExperimentConfig(
            scenario="gaussian1d",
            sampler="rhmc",
            lambda_grid=(1.0,),
            horowitz_angle=HALF_PI,
            step_length=1e-3,
            n_samples=1000,
            seed=11,
            output_path=os.path.join(self.dir.name, "out.csv"),
        )

    def tearDown(self):
        self.dir.cleanup()

    def records(self, **changes):
        return run_sweep(replace(self.config, **changes))

    def by_key(self, records):
        return {(r.lam, r.component_index, r.statistic_name): r for r in records}


class FormattingTestCase(TestCase):
    def test_format_real(self):
        self.assertEqual(format_real(None), "")
        self.assertEqual(format_real(math.nan), "")
        self.assertEqual(format_real(math.inf), "inf")
        self.assertEqual(format_real(3.0), "3")
        self.assertEqual(format_real(0.1), "0.10000000000000001")
        self.assertEqual(float(format_real(math.pi)), math.pi)

    def test_record_row(self):
        record = SweepRecord("gaussian1d", "rhmc", 0.5, 1, "iac", 9.1, 9.0, 100, 4)
        row = record.as_row()
        self.assertEqual(row["lambda"], "0.5")
        self.assertEqual(row["window"], "")
        self.assertEqual(row["flag"], "")


class ScenarioTestCase(ExperimentBaseTestCase):
    def test_targets(self):
        target = build_target(replace(self.config, scenario="gaussian10d"))
        self.assertIsInstance(target, DiagonalGaussianTarget)
        self.assertEqual(target.dim, 10)
        self.assertIsInstance(build_target(replace(self.config, scenario="doublewell2d")), DoubleWell2D)

    def test_drift_start_defaults(self):
        z = drift_start(replace(self.config, scenario="gaussian10d"))
        self.assertEqual(z.position.tolist(), [10.0] * 10)
        self.assertEqual(z.momentum.tolist(), [0.0] * 10)

        z = drift_start(replace(self.config, scenario="doublewell2d"))
        self.assertEqual(z.position.tolist(), [6.0, 6.0])


class SweepTestCase(ExperimentBaseTestCase):
    def test_records_sorted_and_written(self):
        records = self.records(lambda_grid=(2.0, 0.5))
        self.assertEqual([r.sort_key() for r in records], sorted(r.sort_key() for r in records))
        self.assertTrue(os.path.exists(self.config.output_path))

    def test_grid_points_are_independent_streams(self):
        alone = self.by_key(self.records(lambda_grid=(0.5,)))
        together = self.by_key(self.records(lambda_grid=(0.5, 1.0)))
        for key, record in alone.items():
            self.assertEqual(record.empirical_value, together[key].empirical_value)

    def test_custom_scenario(self):
        records = self.by_key(self.records(scenario="custom", sigmas=(0.5, 2.0)))
        self.assertEqual(records[(1.0, 1, "iac")].analytic_value, iac_rhmc_formula(0.5, 1.0))
        self.assertEqual(records[(1.0, 2, "iac")].analytic_value, iac_rhmc_formula(2.0, 1.0))
        self.assertEqual(records[(1.0, -1, "msd")].analytic_value, msd_rhmc_formula([0.5, 2.0], 1.0))

    def test_partial_refresh_has_no_iac_formula(self):
        records = self.by_key(self.records(horowitz_angle=math.pi / 3))
        self.assertIsNone(records[(1.0, 1, "iac")].analytic_value)
        self.assertIsNotNone(records[(1.0, -1, "msd")].analytic_value)

    def test_hmc_closed_forms(self):
        lam = 3 * math.pi / 4
        records = self.by_key(self.records(sampler="hmc", lambda_grid=(lam,)))
        self.assertAlmostEqual(records[(lam, 1, "iac")].analytic_value, iac_hmc_formula(1.0, lam))
        self.assertEqual(records[(lam, 1, "iac")].flag, "")


class OtherRunnersTestCase(ExperimentBaseTestCase):
    def test_drift_check(self):
        curve = run_drift_check(replace(self.config, replicas=5, horizon=2.0))
        self.assertEqual(curve.n_replicas, 5)
        self.assertEqual(curve.mean_v[0], 62.5)

    def test_variant_bias(self):
        config = replace(self.config, sampler="variant1", h_grid=(0.2, 0.1), n_samples=300)
        results = run_variant_bias(config)
        self.assertEqual([h for h, _ in results], [0.1, 0.2])

    def test_sample(self):
        self.assertEqual(run_sample(replace(self.config, n_samples=7)), 8)
        self.assertEqual(run_sample(replace(self.config, sampler="variant2", n_samples=7)), 8)


@skipUnless(FULL_SCALE, "set RHMC_FULL_SCALE=1")
class BenchmarkTestCase(ExperimentBaseTestCase):
    def test_rhmc_iac_matches_formula(self):
        records = self.records(lambda_grid=(0.5, 1.0, 2.0, 4.0), n_samples=10 ** 6)
        for r in records:
            if r.statistic_name == "iac":
                self.assertAlmostEqual(r.empirical_value / r.analytic_value, 1.0, delta=0.1)

    def test_hmc_iac_matches_formula(self):
        grid = (math.pi / 4, HALF_PI, 3 * math.pi / 4, 3 * math.pi / 2)
        records = self.records(sampler="hmc", lambda_grid=grid, n_samples=10 ** 6)
        for r in records:
            if r.statistic_name == "iac":
                tolerance = max(0.15 * r.analytic_value, 0.05)
                self.assertAlmostEqual(r.empirical_value, r.analytic_value, delta=tolerance)

    def test_msd_near_plateau(self):
        records = self.by_key(self.records(scenario="gaussian10d", lambda_grid=(8.0,), n_samples=10 ** 6))
        msd = records[(8.0, -1, "msd")]
        self.assertAlmostEqual(msd.empirical_value / msd.analytic_value, 1.0, delta=0.03)

    def test_double_well_mixing_and_occupancy(self):
        records = self.records(
            scenario="doublewell2d", lambda_grid=(0.5, 1.0, 2.0), step_length=1e-2,
            n_samples=10 ** 6, burn_in=10 ** 4, workers=3)

        iac = [r.empirical_value for r in records if r.statistic_name == "iac"]
        self.assertGreaterEqual(iac[0] * 1.3, iac[1])
        self.assertGreaterEqual(iac[1] * 1.3, iac[2])

        for r in records:
            if r.statistic_name == "occupancy":
                self.assertEqual(r.analytic_value, 0.5)
                self.assertAlmostEqual(r.empirical_value, 0.5, delta=0.05)
