"""Run configuration for rotadapt: flat `key = value` files with command-line overrides."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields
from functools import cache
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EMA_MOMENTUM,
    DEFAULT_EPOCHS,
    DEFAULT_LAMBDA_MS,
    DEFAULT_LAMBDA_OC,
    DEFAULT_LR0,
    DEFAULT_LR_BETA,
    DEFAULT_LR_GAMMA,
    DEFAULT_MINING_STEPS,
    DEFAULT_NUM_CLASSES,
    DEFAULT_PER_CLASS,
    DEFAULT_POINTS,
    DEFAULT_REFRESH_PERIOD,
    DEFAULT_REPETITIONS,
    DEFAULT_SEED,
    DEFAULT_STEP_SIZE,
    DEFAULT_TAU_PRIME,
    DEFAULT_TAU_S,
    DEFAULT_TAU_T,
    DEFAULT_VARIANTS,
    DEFAULT_WEIGHT_DECAY,
    MIN_PER_CLASS,
    MIN_POINTS,
    TRANSLATIONS_PATH,
    OcTarget,
    ShapeClass,
)
from .exceptions import ConfigIssue, ConfigValidationError
from .losses import LossWeights
from .mining import MiningConfig
from .synthetic import SOURCE_PROFILE, TARGET_PROFILE, BenchmarkSpec, DomainProfile
from .trainer import TrainConfig

_LOGGER = logging.getLogger(__name__)


@cache
def _translations() -> dict[str, str]:
    with TRANSLATIONS_PATH.open(encoding="utf-8") as handle:
        return json.load(handle)["config"]["error"]


def translate(error_key: str) -> str:
    """Human-readable text of an error key; unknown keys are returned unchanged."""
    return _translations().get(error_key, error_key)


def _int(minimum: int | None = None, maximum: int | None = None) -> vol.All:
    return vol.All(vol.Coerce(int, msg="not_an_integer"), vol.Range(min=minimum, max=maximum, msg=_range_key(minimum, maximum)))


def _float(minimum: float | None = None, maximum: float | None = None, *, strict_min: bool = False) -> vol.All:
    key = "must_be_positive" if strict_min and minimum == 0 else _range_key(minimum, maximum)
    return vol.All(
        vol.Coerce(float, msg="not_a_number"),
        vol.Range(min=minimum, max=maximum, min_included=not strict_min, msg=key),
    )


def _range_key(minimum: float | None, maximum: float | None) -> str:
    if minimum is not None and maximum is not None:
        return f"between_{minimum:g}_and_{maximum:g}"
    if minimum == 0:
        return "must_be_non_negative"
    return f"at_least_{minimum:g}" if minimum is not None else "out_of_range"


def _int_list(value: Any) -> tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        value = ",".join(str(part) for part in value)
    try:
        return tuple(int(part) for part in str(value).split(",") if part.strip())
    except ValueError as exception:
        raise vol.Invalid("not_an_integer_list") from exception


def _float_list(value: Any) -> tuple[float, ...]:
    if isinstance(value, (tuple, list)):
        value = ",".join(str(part) for part in value)
    try:
        parsed = tuple(float(part) for part in str(value).split(",") if part.strip())
    except ValueError as exception:
        raise vol.Invalid("not_a_number_list") from exception
    if not parsed:
        raise vol.Invalid("not_a_number_list")
    return parsed


def _profile_keys(prefix: str, profile: DomainProfile) -> dict[str, tuple[Any, Any]]:
    return {
        f"{prefix}_jitter_sigma": (profile.jitter_sigma, _float(0.0)),
        f"{prefix}_density_bias": (profile.density_bias, _float()),
        f"{prefix}_occlusion_fraction": (profile.occlusion_fraction, _float(0.0, 0.5)),
        f"{prefix}_scale_min": (profile.scale_min, _float(0.0, strict_min=True)),
        f"{prefix}_scale_max": (profile.scale_max, _float(0.0, strict_min=True)),
    }


# key: (default, validator)
OPTIONS: dict[str, tuple[Any, Any]] = {
    # training
    "epochs": (DEFAULT_EPOCHS, _int(1)),
    "batch_size": (DEFAULT_BATCH_SIZE, _int(2)),
    "num_classes": (DEFAULT_NUM_CLASSES, _int(2, len(ShapeClass))),
    "seed": (DEFAULT_SEED, _int(0)),
    "lr0": (DEFAULT_LR0, _float(0.0, strict_min=True)),
    "gamma": (DEFAULT_LR_GAMMA, _float(0.0)),
    "beta": (DEFAULT_LR_BETA, _float(0.0)),
    "ema_momentum": (DEFAULT_EMA_MOMENTUM, _float(0.0, 1.0)),
    "weight_decay": (DEFAULT_WEIGHT_DECAY, _float(0.0)),
    "V": (DEFAULT_VARIANTS, _int(1)),
    "oc_target": (OcTarget.TEACHER_ON_INTRICATE.value, vol.In([t.value for t in OcTarget], msg="unknown_oc_target")),
    "checkpoint_every": (0, _int(0)),
    "point_augment": (False, vol.Boolean(msg="not_a_boolean")),
    # mining
    "AT": (DEFAULT_REPETITIONS, _int(1)),
    "T": (DEFAULT_REFRESH_PERIOD, _int(1)),
    "steps": (DEFAULT_MINING_STEPS, _int(0)),
    "step_size": (DEFAULT_STEP_SIZE, _float(0.0, strict_min=True)),
    # losses
    "lambda_oc": (DEFAULT_LAMBDA_OC, _float(0.0)),
    "lambda_ms": (DEFAULT_LAMBDA_MS, _float(0.0)),
    "tau_s": (DEFAULT_TAU_S, _float(0.0, strict_min=True)),
    "tau_t": (DEFAULT_TAU_T, _float(0.0, strict_min=True)),
    "tau_prime": (DEFAULT_TAU_PRIME, _float(0.0, strict_min=True)),
    # benchmark
    "per_class": (DEFAULT_PER_CLASS, _int(MIN_PER_CLASS)),
    "n_points": (DEFAULT_POINTS, _int(MIN_POINTS)),
    **_profile_keys("source", SOURCE_PROFILE),
    **_profile_keys("target", TARGET_PROFILE),
    # experiments
    "seeds": ((), _int_list),
    "sweep_param": ("lambda_oc", vol.In(["lambda_oc", "lambda_ms"], msg="unknown_sweep_param")),
    "sweep_values": ((0.001, 0.01, 0.1, 1.0), _float_list),
    "sweep_fixed": (0.1, _float(0.0)),
    "trials": (1000, _int(1)),
    # paths
    "data": ("data", vol.Coerce(str)),
    "out": ("run", vol.Coerce(str)),
    "ckpt": ("", vol.Coerce(str)),
}

CONFIG_SCHEMA = vol.Schema(
    {vol.Optional(key, default=default): validator for key, (default, validator) in OPTIONS.items()},
    extra=vol.PREVENT_EXTRA,
)


@dataclass(frozen=True)
class RunConfig:
    """Validated flat configuration of one invocation."""

    epochs: int
    batch_size: int
    num_classes: int
    seed: int
    lr0: float
    gamma: float
    beta: float
    ema_momentum: float
    weight_decay: float
    V: int
    oc_target: str
    checkpoint_every: int
    point_augment: bool
    AT: int
    T: int
    steps: int
    step_size: float
    lambda_oc: float
    lambda_ms: float
    tau_s: float
    tau_t: float
    tau_prime: float
    per_class: int
    n_points: int
    source_jitter_sigma: float
    source_density_bias: float
    source_occlusion_fraction: float
    source_scale_min: float
    source_scale_max: float
    target_jitter_sigma: float
    target_density_bias: float
    target_occlusion_fraction: float
    target_scale_min: float
    target_scale_max: float
    seeds: tuple[int, ...]
    sweep_param: str
    sweep_values: tuple[float, ...]
    sweep_fixed: float
    trials: int
    data: str
    out: str
    ckpt: str

    @classmethod
    def defaults(cls) -> RunConfig:
        """Every key at its default."""
        return validate_config("")

    @property
    def data_dir(self) -> Path:
        """Dataset directory."""
        return Path(self.data)

    @property
    def out_dir(self) -> Path:
        """Output directory."""
        return Path(self.out)

    def mining_config(self) -> MiningConfig:
        """Mining settings."""
        return MiningConfig(repetitions=self.AT, steps=self.steps, step_size=self.step_size, refresh_period=self.T)

    def loss_weights(self) -> LossWeights:
        """Loss weights and temperatures."""
        return LossWeights(
            lambda_oc=self.lambda_oc,
            lambda_ms=self.lambda_ms,
            tau_s=self.tau_s,
            tau_t=self.tau_t,
            tau_prime=self.tau_prime,
        )

    def train_config(self, workers: int | None = None) -> TrainConfig:
        """Training settings."""
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            num_classes=self.num_classes,
            seed=self.seed,
            lr0=self.lr0,
            gamma=self.gamma,
            beta=self.beta,
            ema_momentum=self.ema_momentum,
            weight_decay=self.weight_decay,
            mining=self.mining_config(),
            weights=self.loss_weights(),
            variants=self.V,
            oc_target=OcTarget(self.oc_target),
            checkpoint_every=self.checkpoint_every,
            point_augment=self.point_augment,
            workers=workers,
        )

    def domain_profile(self, name: str) -> DomainProfile:
        """Style of the `source` or `target` domain."""
        return DomainProfile(
            name=name,
            jitter_sigma=getattr(self, f"{name}_jitter_sigma"),
            density_bias=getattr(self, f"{name}_density_bias"),
            occlusion_fraction=getattr(self, f"{name}_occlusion_fraction"),
            scale_min=getattr(self, f"{name}_scale_min"),
            scale_max=getattr(self, f"{name}_scale_max"),
        )

    def benchmark_spec(self) -> BenchmarkSpec:
        """Synthetic benchmark settings."""
        return BenchmarkSpec(
            num_classes=self.num_classes,
            per_class=self.per_class,
            n_points=self.n_points,
            source=self.domain_profile("source"),
            target=self.domain_profile("target"),
            seed=self.seed,
        )

    def seed_list(self) -> tuple[int, ...]:
        """Seeds of multi-seed experiments, `seed` alone when none are listed."""
        return self.seeds or (self.seed,)


def parse_config_text(text: str) -> tuple[dict[str, str], list[ConfigIssue]]:
    """
    Split a flat config file into raw key/value strings.

    `#` starts a comment, blank lines are ignored, a repeated key keeps its
    last value.
    """
    values: dict[str, str] = {}
    issues: list[ConfigIssue] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, separator, value = content.partition("=")
        if not separator or not key.strip():
            issues.append(ConfigIssue(key=f"line {line_number}", value=content, constraint=translate("malformed_line")))
            continue
        values[key.strip()] = value.strip()
    return values, issues


def _cross_field_issues(config: dict[str, Any]) -> list[ConfigIssue]:
    issues: list[ConfigIssue] = []
    if config["V"] > config["AT"]:
        issues.append(ConfigIssue(key="V", value=str(config["V"]), constraint=translate("v_exceeds_at")))
    for prefix in ("source", "target"):
        if config[f"{prefix}_scale_min"] > config[f"{prefix}_scale_max"]:
            key = f"{prefix}_scale_min"
            issues.append(ConfigIssue(key=key, value=str(config[key]), constraint=translate("scale_range_inverted")))
    return issues


def validate_config(text: str = "", overrides: dict[str, str] | None = None) -> RunConfig:
    """
    Validate a config file plus overrides, reporting every violated constraint at once.

    Args:
        text (str): Content of a flat `key = value` file.
        overrides (dict[str, str] | None): Values taking precedence over the file.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigValidationError: With one issue per violated constraint.

    """
    raw, issues = parse_config_text(text)
    raw.update(overrides or {})

    try:
        config = CONFIG_SCHEMA(raw)
    except vol.MultipleInvalid as exception:
        for error in exception.errors:
            key = str(error.path[0]) if error.path else "?"
            error_key = "unknown_key" if error.error_message == "extra keys not allowed" else error.error_message
            issues.append(ConfigIssue(key=key, value=str(raw.get(key, "")), constraint=translate(error_key)))
        config = None

    if config is not None:
        issues.extend(_cross_field_issues(config))
    if issues:
        issues.sort(key=lambda issue: issue.key)
        _LOGGER.debug("Configuration rejected with %d issues", len(issues))
        raise ConfigValidationError(issues)

    return RunConfig(**{field.name: config[field.name] for field in fields(RunConfig)})


def load_config(path: Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read and validate a config file; None means defaults plus overrides."""
    text = ""
    if path is not None:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exception:
            issue = ConfigIssue(key="config", value=str(path), constraint=translate("unreadable_file"))
            raise ConfigValidationError([issue]) from exception
    return validate_config(text, overrides)
