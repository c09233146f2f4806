"""Experiment configuration: key=value files, flag overrides and validation."""

import math
import re
from dataclasses import dataclass
from typing import Optional, Tuple

from dotenv import dotenv_values
from werkzeug.datastructures import MultiDict
from wtforms import Form, FloatField, IntegerField, SelectField, StringField
from wtforms.validators import InputRequired, NumberRange, Optional as OptionalInput
from wtforms.validators import ValidationError

from analysis import MIN_SERIES_LENGTH
from models import HALF_PI, MAX_SEED, SamplingError

SCENARIOS = ["gaussian1d", "gaussian10d", "doublewell2d", "custom"]
SAMPLERS = ["hmc", "hmc-metropolis", "rhmc", "variant1", "variant2"]

GAUSSIAN_SCENARIOS = {"gaussian1d", "gaussian10d", "custom"}

GAUSSIAN_SAMPLES = 10 ** 6
DOUBLE_WELL_SAMPLES = 10 ** 4
DOUBLE_WELL_BURN_IN = 10 ** 4

CONFIG_KEYS = [
    "scenario", "sampler", "lambda_grid", "horowitz_angle", "step_length",
    "n_samples", "seed", "output_path", "sigmas", "burn_in", "h_grid",
    "q0", "p0", "horizon", "replicas", "workers",
]

_PI_MULTIPLE = re.compile(r"^([0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.eE+-]+))?$")


class ConfigValidationError(SamplingError):
    """The merged configuration failed validation; `errors` maps key -> messages."""

    def __init__(self, errors):
        self.errors = errors
        lines = [f"{key}: {message}" for key, messages in errors.items() for message in messages]
        super().__init__("\n".join(lines))


def parse_real(text):
    """Parse a real, also accepting multiples of pi such as 'pi/2' or '3*pi/4'."""

    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass

    match = _PI_MULTIPLE.match(text)
    if not match:
        raise ValueError(f"not a number: {text!r}")

    coefficient = match.group(1)
    if coefficient in ("", "+", "-"):
        coefficient += "1"
    factor = float(coefficient)
    divisor = float(match.group(2)) if match.group(2) else 1.0
    return factor * math.pi / divisor


def parse_reals(text):
    """Comma-separated list of reals."""

    return tuple(parse_real(token) for token in text.split(",") if token.strip())


def scenario_dimension(scenario, sigmas_text=None):
    """Dimension implied by a scenario name, None when it cannot be told yet."""

    if scenario == "gaussian1d":
        return 1
    if scenario == "gaussian10d":
        return 10
    if scenario == "doublewell2d":
        return 2
    if scenario == "custom" and sigmas_text:
        try:
            return len(parse_reals(sigmas_text))
        except ValueError:
            return None
    return None


class RealField(FloatField):
    """FloatField that also accepts multiples of pi."""

    def process_formdata(self, valuelist):
        if not valuelist:
            return
        try:
            self.data = parse_real(valuelist[0])
        except ValueError:
            self.data = None
            raise ValueError(self.gettext("Not a valid float value."))


def _list_of_reals(field, positive=True):
    try:
        values = parse_reals(field.data or "")
    except ValueError as exc:
        raise ValidationError(str(exc))
    if not values:
        raise ValidationError("needs at least one value")
    if positive and not all(math.isfinite(v) and v > 0 for v in values):
        raise ValidationError("all values must be positive")
    return values


class ExperimentForm(Form):
    """Settings shared by every subcommand."""

    scenario = SelectField(
        "scenario",
        choices=SCENARIOS,
        validators=[InputRequired()],
    )

    sampler = SelectField(
        "sampler",
        choices=SAMPLERS,
        validators=[InputRequired()],
    )

    lambda_grid = StringField(
        "lambda_grid",
        validators=[InputRequired()],
    )

    horowitz_angle = RealField(
        "horowitz_angle",
        default=HALF_PI,
        validators=[OptionalInput()],
    )

    step_length = RealField(
        "step_length",
        default=1e-3,
        validators=[OptionalInput()],
    )

    n_samples = IntegerField(
        "n_samples",
        validators=[OptionalInput(), NumberRange(min=1)],
    )

    seed = IntegerField(
        "seed",
        validators=[InputRequired(), NumberRange(min=0, max=MAX_SEED)],
    )

    output_path = StringField(
        "output_path",
        validators=[InputRequired()],
    )

    sigmas = StringField("sigmas", validators=[OptionalInput()])

    burn_in = IntegerField(
        "burn_in",
        validators=[OptionalInput(), NumberRange(min=0)],
    )

    workers = IntegerField(
        "workers",
        default=1,
        validators=[OptionalInput(), NumberRange(min=1)],
    )

    def validate_lambda_grid(self, field):
        _list_of_reals(field)

    def validate_horowitz_angle(self, field):
        if field.data is None or not 0 < field.data <= HALF_PI + 1e-12:
            raise ValidationError(
                "horowitz_angle must lie in (0, pi/2]; 0 never refreshes the momentum")

    def validate_step_length(self, field):
        if field.data is None or not (math.isfinite(field.data) and field.data > 0):
            raise ValidationError("step_length must be positive")

    def validate_sigmas(self, field):
        _list_of_reals(field)

    def validate(self, extra_validators=None):
        """Field checks, then the checks that look at several keys at once."""

        valid = super().validate(extra_validators)

        if self.scenario.data == "custom" and not self.sigmas.data:
            self.sigmas.errors.append("required when scenario is custom")
            valid = False

        return valid


class SweepForm(ExperimentForm):
    """sweep: lambda grid of IAC and MSD estimates."""

    n_samples = IntegerField(
        "n_samples",
        validators=[OptionalInput(), NumberRange(min=MIN_SERIES_LENGTH)],
    )

    def validate_sampler(self, field):
        if field.data not in ("hmc", "hmc-metropolis", "rhmc"):
            raise ValidationError("sweep runs hmc, hmc-metropolis or rhmc")


class VariantBiasForm(ExperimentForm):
    """variant-bias: time-weighted second moment over an h grid."""

    h_grid = StringField("h_grid", validators=[InputRequired()])

    def validate_sampler(self, field):
        if field.data not in ("variant1", "variant2"):
            raise ValidationError("variant-bias runs variant1 or variant2")

    def validate_scenario(self, field):
        if field.data != "gaussian1d":
            raise ValidationError("variant-bias is defined for gaussian1d")

    def validate_lambda_grid(self, field):
        if len(_list_of_reals(field)) != 1:
            raise ValidationError("variant-bias takes exactly one lambda")

    def validate_h_grid(self, field):
        _list_of_reals(field)


class DriftCheckForm(ExperimentForm):
    """drift-check: replica mean of the Lyapunov function from a far start."""

    q0 = StringField("q0", validators=[OptionalInput()])
    p0 = StringField("p0", validators=[OptionalInput()])

    horizon = RealField(
        "horizon",
        default=10.0,
        validators=[OptionalInput(), NumberRange(min=0)],
    )

    replicas = IntegerField(
        "replicas",
        default=1000,
        validators=[OptionalInput(), NumberRange(min=1)],
    )

    def validate_sampler(self, field):
        if field.data != "rhmc":
            raise ValidationError("drift-check runs rhmc")

    def validate_lambda_grid(self, field):
        if len(_list_of_reals(field)) != 1:
            raise ValidationError("drift-check takes exactly one lambda")

    def validate_q0(self, field):
        self._check_state_vector(field)

    def validate_p0(self, field):
        self._check_state_vector(field)

    def _check_state_vector(self, field):
        values = _list_of_reals(field, positive=False)
        dim = scenario_dimension(self.scenario.data, self.sigmas.data)
        if dim is not None and len(values) != dim:
            raise ValidationError(f"needs {dim} entries for {self.scenario.data}")


class SampleForm(ExperimentForm):
    """sample: raw chain dump at the first lambda of the grid."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated settings of one command-line run."""

    scenario: str
    sampler: str
    lambda_grid: Tuple[float, ...]
    horowitz_angle: float
    step_length: float
    n_samples: int
    seed: int
    output_path: str
    sigmas: Optional[Tuple[float, ...]] = None
    burn_in: int = 0
    workers: int = 1
    h_grid: Tuple[float, ...] = ()
    q0: Optional[Tuple[float, ...]] = None
    p0: Optional[Tuple[float, ...]] = None
    horizon: float = 10.0
    replicas: int = 1000

    @property
    def is_gaussian(self):
        return self.scenario in GAUSSIAN_SCENARIOS

    @property
    def target_sigmas(self):
        """Standard deviations of the Gaussian scenarios, None for the double well."""

        if self.scenario == "gaussian1d":
            return (1.0,)
        if self.scenario == "gaussian10d":
            return tuple(i / 10 for i in range(1, 11))
        if self.scenario == "custom":
            return self.sigmas
        return None

    @property
    def dimension(self):
        if self.scenario == "doublewell2d":
            return 2
        return len(self.target_sigmas)


def load_config(path=None, overrides=None):
    """Merge a key=value file with flag overrides (flags win) into a MultiDict."""

    values = {}
    if path:
        values.update({k.strip(): v for k, v in dotenv_values(path).items() if v is not None})
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key.replace("-", "_")] = str(value)

    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigValidationError({key: ["unknown configuration key"] for key in unknown})
    return MultiDict(values)


def build_config(form_class, values):
    """Validate `values` with `form_class` and return an ExperimentConfig."""

    form = form_class(formdata=values)
    if not form.validate():
        raise ConfigValidationError(
            {name: list(messages) for name, messages in form.errors.items()})

    data = form.data
    gaussian = data["scenario"] in GAUSSIAN_SCENARIOS

    n_samples = data["n_samples"]
    if n_samples is None:
        n_samples = GAUSSIAN_SAMPLES if gaussian else DOUBLE_WELL_SAMPLES
    burn_in = data["burn_in"]
    if burn_in is None:
        burn_in = 0 if gaussian else DOUBLE_WELL_BURN_IN

    config = ExperimentConfig(
        scenario=data["scenario"],
        sampler=data["sampler"],
        lambda_grid=parse_reals(data["lambda_grid"]),
        horowitz_angle=data["horowitz_angle"],
        step_length=data["step_length"],
        n_samples=n_samples,
        seed=data["seed"],
        output_path=data["output_path"],
        sigmas=parse_reals(data["sigmas"]) if data.get("sigmas") else None,
        burn_in=burn_in,
        workers=data["workers"] or 1,
        h_grid=parse_reals(data["h_grid"]) if data.get("h_grid") else (),
        q0=parse_reals(data["q0"]) if data.get("q0") else None,
        p0=parse_reals(data["p0"]) if data.get("p0") else None,
        horizon=data["horizon"] if data.get("horizon") is not None else 10.0,
        replicas=data.get("replicas") or 1000,
    )
    return config
