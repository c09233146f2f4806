"""Command-line tests."""

# run these tests like:
#
#    python -m unittest test_app.py


import csv
import math
from unittest import TestCase

from click.testing import CliRunner

from app import cli, run_command
from experiments import DRIFT_CSV_HEADERS, SWEEP_CSV_HEADERS, VARIANT_BIAS_CSV_HEADERS
from forms import SampleForm

GAUSSIAN_RHMC = [
    "--scenario", "gaussian1d", "--sampler", "rhmc", "--seed", "3",
]


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return reader.fieldnames, list(reader)


class CliBaseTestCase(TestCase):
    def setUp(self):
        self.runner = CliRunner()

    def invoke(self, *args):
        return self.runner.invoke(cli, list(args))


class SweepCommandTestCase(CliBaseTestCase):
    def test_gaussian_sweep(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sweep", *GAUSSIAN_RHMC, "--lambda-grid", "1,0.5",
                "--n-samples", "5000", "--output-path", "sweep.csv")
            self.assertEqual(result.exit_code, 0, result.output)
            self.assertIn("Wrote sweep.csv", result.output)

            headers, rows = read_csv("sweep.csv")
            self.assertEqual(headers, SWEEP_CSV_HEADERS)

            keys = [(float(r["lambda"]), int(r["component_index"]), r["statistic_name"]) for r in rows]
            self.assertEqual(keys, [(0.5, -1, "msd"), (0.5, 1, "iac"), (1.0, -1, "msd"), (1.0, 1, "iac")])

            iac = rows[3]
            self.assertEqual(iac["analytic_value"], "3")
            self.assertEqual(iac["n_samples"], "5000")
            self.assertEqual(iac["seed"], "3")
            self.assertNotEqual(iac["window"], "")
            self.assertAlmostEqual(float(iac["empirical_value"]), 3.0, delta=1.5)
            self.assertAlmostEqual(float(rows[0]["analytic_value"]), 0.4)

    def test_same_seed_same_file(self):
        with self.runner.isolated_filesystem():
            args = ["sweep", *GAUSSIAN_RHMC, "--lambda-grid", "0.5,2", "--n-samples", "500"]
            self.invoke(*args, "--output-path", "a.csv")
            self.invoke(*args, "--output-path", "b.csv", "--workers", "2")

            with open("a.csv") as a, open("b.csv") as b:
                self.assertEqual(a.read(), b.read())

    def test_config_file_with_override(self):
        with self.runner.isolated_filesystem():
            with open("run.env", "w") as f:
                f.write("scenario=gaussian10d\nsampler=rhmc\nlambda_grid=1\nseed=1\n"
                        "n_samples=300\noutput_path=from_file.csv\n")

            result = self.invoke("sweep", "--config", "run.env", "--output-path", "flag.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            _, rows = read_csv("flag.csv")
            self.assertEqual(len(rows), 11)
            self.assertEqual([int(r["component_index"]) for r in rows], [-1] + list(range(1, 11)))

    def test_double_well(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sweep", "--scenario", "doublewell2d", "--sampler", "rhmc",
                "--lambda-grid", "0.5", "--n-samples", "300", "--burn-in", "10",
                "--step-length", "0.01", "--seed", "4", "--output-path", "dw.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            _, rows = read_csv("dw.csv")
            self.assertEqual([r["statistic_name"] for r in rows], ["iac", "msd", "occupancy"])
            self.assertEqual({r["component_index"] for r in rows}, {"-1"})
            self.assertEqual(rows[0]["analytic_value"], "")
            self.assertEqual(rows[2]["analytic_value"], "0.5")

    def test_resonant_hmc(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sweep", "--scenario", "gaussian1d", "--sampler", "hmc",
                "--lambda-grid", "pi", "--n-samples", "500", "--seed", "1",
                "--output-path", "hmc.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            _, rows = read_csv("hmc.csv")
            self.assertEqual([r["flag"] for r in rows], ["resonant", "resonant"])

    def test_metropolis_sweep(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sweep", "--scenario", "gaussian1d", "--sampler", "hmc-metropolis",
                "--lambda-grid", "0.5", "--n-samples", "200", "--step-length", "0.05",
                "--seed", "1", "--output-path", "mh.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            _, rows = read_csv("mh.csv")
            self.assertEqual(len(rows), 2)
            self.assertTrue(all(r["analytic_value"] == "" for r in rows))


class ErrorHandlingTestCase(CliBaseTestCase):
    def test_invalid_config_exit_code(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sweep", *GAUSSIAN_RHMC, "--lambda-grid", "1",
                "--horowitz-angle", "0", "--n-samples", "-4", "--output-path", "x.csv")

            self.assertEqual(result.exit_code, 2)
            self.assertIn("horowitz_angle", result.output)
            self.assertIn("n_samples", result.output)

    def test_sweep_too_short_for_iac(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sweep", *GAUSSIAN_RHMC, "--lambda-grid", "1", "--n-samples", "50",
                "--output-path", "short.csv")

            self.assertEqual(result.exit_code, 2)
            self.assertIn("n_samples", result.output)

    def test_wrong_sampler_for_subcommand(self):
        result = self.invoke(
            "variant-bias", *GAUSSIAN_RHMC, "--lambda-grid", "1",
            "--h-grid", "0.1", "--output-path", "x.csv")
        self.assertEqual(result.exit_code, 2)
        self.assertIn("sampler", result.output)

    def test_missing_config_file(self):
        result = self.invoke("sweep", "--config", "does-not-exist.env")
        self.assertEqual(result.exit_code, 2)

    def test_unwritable_output(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sample", *GAUSSIAN_RHMC, "--lambda-grid", "1", "--n-samples", "5",
                "--output-path", "no/such/dir/out.csv")
            self.assertEqual(result.exit_code, 3)
            self.assertIn("Run failed", result.output)


class DriftCheckCommandTestCase(CliBaseTestCase):
    def test_drift_curve(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "drift-check", *GAUSSIAN_RHMC, "--lambda-grid", "1",
                "--replicas", "20", "--horizon", "5", "--output-path", "drift.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            headers, rows = read_csv("drift.csv")
            self.assertEqual(headers, DRIFT_CSV_HEADERS)
            self.assertEqual(len(rows), 50)
            self.assertEqual(rows[0]["time"], "0")
            self.assertEqual(rows[0]["mean_V"], "62.5")
            self.assertEqual(float(rows[-1]["time"]), 5.0)
            self.assertLess(float(rows[-1]["mean_V"]), 62.5)

    def test_single_replica_has_no_stderr(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "drift-check", *GAUSSIAN_RHMC, "--lambda-grid", "1", "--replicas", "1",
                "--horizon", "1", "--q0", "2", "--p0=-1", "--output-path", "drift.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            _, rows = read_csv("drift.csv")
            self.assertTrue(all(r["replica_stderr"] == "" for r in rows))
            # V(2, -1) = 2.5 + 0.25 * (-2) + 0.25 * 4 / 2
            self.assertEqual(float(rows[0]["mean_V"]), 2.5)


class VariantBiasCommandTestCase(CliBaseTestCase):
    def test_bias_rows(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "variant-bias", "--scenario", "gaussian1d", "--sampler", "variant2",
                "--lambda-grid", "1", "--h-grid", "0.5,0.1", "--n-samples", "500",
                "--seed", "1", "--output-path", "bias.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            headers, rows = read_csv("bias.csv")
            self.assertEqual(headers, VARIANT_BIAS_CSV_HEADERS)
            self.assertEqual([float(r["h"]) for r in rows], [0.1, 0.5])
            for row in rows:
                self.assertEqual(row["n_events"], "500")
                self.assertAlmostEqual(
                    float(row["bias"]), float(row["time_weighted_q2"]) - 1.0, places=12)


class SampleCommandTestCase(CliBaseTestCase):
    def test_rhmc_dump(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sample", *GAUSSIAN_RHMC, "--lambda-grid", "1", "--n-samples", "10",
                "--output-path", "chain.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            headers, rows = read_csv("chain.csv")
            self.assertEqual(headers, ["t", "q_1", "p_1", "H"])
            self.assertEqual(len(rows), 11)
            self.assertEqual(rows[0]["t"], "0")

            times = [float(r["t"]) for r in rows]
            self.assertEqual(times, sorted(times))
            for row in rows:
                q, p = float(row["q_1"]), float(row["p_1"])
                self.assertAlmostEqual(float(row["H"]), 0.5 * (q * q + p * p))

    def test_double_well_hmc_dump(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sample", "--scenario", "doublewell2d", "--sampler", "hmc",
                "--lambda-grid", "0.1", "--step-length", "0.01", "--n-samples", "5",
                "--seed", "2", "--output-path", "dw.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            headers, rows = read_csv("dw.csv")
            self.assertEqual(headers, ["t", "q_1", "q_2", "p_1", "p_2", "H"])
            self.assertEqual(len(rows), 6)
            self.assertEqual((rows[0]["q_1"], rows[0]["q_2"]), ("2", "1"))
            self.assertTrue(math.isclose(float(rows[-1]["t"]), 0.5))

    def test_variant_dump(self):
        with self.runner.isolated_filesystem():
            result = self.invoke(
                "sample", *GAUSSIAN_RHMC[:2], "--sampler", "variant1", "--seed", "3",
                "--lambda-grid", "1", "--step-length", "0.1", "--n-samples", "20",
                "--output-path", "v.csv")
            self.assertEqual(result.exit_code, 0, result.output)

            _, rows = read_csv("v.csv")
            self.assertEqual(len(rows), 21)


class RunCommandTestCase(TestCase):
    def settings(self, **values):
        base = {"scenario": "gaussian1d", "sampler": "rhmc", "lambda_grid": "2",
                "seed": "5", "output_path": "out.csv", "n_samples": "7"}
        base.update(values)
        return base

    def test_runner_gets_validated_config(self):
        seen = []
        result = run_command(SampleForm, lambda config: seen.append(config) or "done",
                             None, self.settings())

        self.assertEqual(result, "done")
        self.assertEqual(seen[0].lambda_grid, (2.0,))
        self.assertEqual(seen[0].n_samples, 7)

    def test_exit_codes(self):
        with self.assertRaises(SystemExit) as ctx:
            run_command(SampleForm, lambda config: None, None, self.settings(seed="-1"))
        self.assertEqual(ctx.exception.code, 2)

        def fail(config):
            raise OSError("disk full")

        with self.assertRaises(SystemExit) as ctx:
            run_command(SampleForm, fail, None, self.settings())
        self.assertEqual(ctx.exception.code, 3)
