"""Command-line entry point for the sampler benchmarks.

    python app.py sweep --config gaussian10d.env
    python app.py -v drift-check --scenario doublewell2d --sampler rhmc \
        --lambda-grid 1 --seed 7 --output-path drift.csv
"""

import logging
import sys

import click

from experiments import run_drift_check, run_sample, run_sweep, run_variant_bias
from forms import (
    ConfigValidationError, DriftCheckForm, SampleForm, SweepForm, VariantBiasForm,
    build_config, load_config)
from models import SamplingError

logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 2
EXIT_RUN_ERROR = 3

SHARED_KEYS = [
    "scenario", "sampler", "lambda_grid", "horowitz_angle", "step_length",
    "n_samples", "seed", "output_path", "sigmas", "burn_in", "workers",
]


def config_options(*extra_keys):
    """Add --config plus one --dashed-name option per configuration key."""

    def decorate(command):
        for key in reversed(SHARED_KEYS + list(extra_keys)):
            command = click.option(
                f"--{key.replace('_', '-')}", key, default=None,
                help=f"Overrides {key} from the config file.")(command)
        return click.option(
            "--config", "config_path", default=None,
            type=click.Path(exists=True, dir_okay=False),
            help="key=value file with the run settings.")(command)

    return decorate


def run_command(form_class, runner, config_path, overrides):
    """Validate the merged settings with `form_class`, then call `runner`.

    Validation problems exit with status 2, sampling or file errors with 3.
    """

    try:
        config = build_config(form_class, load_config(config_path, overrides))
    except ConfigValidationError as exc:
        click.echo(f"Invalid configuration:\n{exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    logger.info("%s with %s", runner.__name__, config)
    try:
        result = runner(config)
    except (SamplingError, OSError) as exc:
        click.echo(f"Run failed: {exc}", err=True)
        sys.exit(EXIT_RUN_ERROR)

    click.echo(f"Wrote {config.output_path}")
    return result


##############################################################################
# Commands


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
def cli(verbose):
    """Randomized HMC benchmarks on Gaussian and double-well targets."""

    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG

    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@cli.command()
@config_options()
def sweep(config_path, **settings):
    """IAC and MSD over a grid of mean durations."""

    return run_command(SweepForm, run_sweep, config_path, settings)


@cli.command("drift-check")
@config_options("q0", "p0", "horizon", "replicas")
def drift_check(config_path, **settings):
    """Replica mean of the Lyapunov function from a far-away start."""

    return run_command(DriftCheckForm, run_drift_check, config_path, settings)


@cli.command("variant-bias")
@config_options("h_grid")
def variant_bias(config_path, **settings):
    """Time-weighted second moment of the jump variants over a step grid."""

    return run_command(VariantBiasForm, run_variant_bias, config_path, settings)


@cli.command()
@config_options()
def sample(config_path, **settings):
    """Dump one chain: t, positions, momenta and energy per row."""

    return run_command(SampleForm, run_sample, config_path, settings)


if __name__ == '__main__':
    cli()
