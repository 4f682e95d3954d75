"""Configuration loading and management for wtdpsim."""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import tomli as tomllib
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .analysis import AnalysisMode
from .channel import FadingKind
from .model import NdfMode
from .simulator import SimulationMode

logger = logging.getLogger("wtdpsim.config")

CONFIG_FILE_NAMES = ("wtdpsim.yml", "wtdpsim.yaml")
MIN_DESIGN_TRIALS = 100


class ConfigError(ValueError):
    """Raised when a configuration file cannot be read or validated."""


class ExperimentKind(str, Enum):
    """Shipped experiment designs."""

    MH_SWEEP = "MhSweep"
    SNR_SWEEP = "SnrSweep"
    RICIAN_K_SWEEP = "RicianKSweep"
    TWO_TRAIN_SWEEP = "TwoTrainSweep"
    CUSTOM = "Custom"


class ExperimentOutputs(BaseModel):
    """Where an experiment writes its artifacts."""

    csv: Optional[Path] = Field(default=None, description="Result table")
    trace: Optional[Path] = Field(default=None, description="JSON-lines event trace")
    plot: Optional[Path] = Field(default=None, description="Rendered plotting script")


class ExperimentSpec(BaseModel):
    """A parameter sweep over the base configuration."""

    kind: ExperimentKind = Field(default=ExperimentKind.CUSTOM, description="Design")
    name: str = Field(default="custom", description="Experiment name")
    sweep: Dict[str, List[Any]] = Field(
        default_factory=dict,
        description="Axis name to values; the grid is their cartesian product",
    )
    trials: int = Field(default=100, ge=1, description="Trials per grid point")
    outputs: ExperimentOutputs = Field(
        default_factory=ExperimentOutputs, description="Output paths"
    )

    model_config = ConfigDict(validate_assignment=True)

    @model_validator(mode="after")
    def _check_sweep(self) -> "ExperimentSpec":
        for axis, values in self.sweep.items():
            if not values:
                raise ValueError(f"Sweep axis '{axis}' has no values")
        if self.kind is not ExperimentKind.CUSTOM and self.trials < MIN_DESIGN_TRIALS:
            raise ValueError(
                f"{self.kind.value} experiments need at least "
                f"{MIN_DESIGN_TRIALS} trials per point, got {self.trials}"
            )
        return self


class WtdpConfig(BaseModel):
    """Main configuration model for wtdpsim."""

    # Channel
    snr0_db: float = Field(default=15.0, description="Mean one-hop SNR in dB")
    eta: float = Field(default=3.5, gt=0.0, description="Path-loss exponent")
    F: int = Field(default=1, ge=1, description="Frequency reuse period")
    R: float = Field(default=1.5, gt=0.0, description="Rate in bits/sec/Hz")
    fading: FadingKind = Field(default=FadingKind.RAYLEIGH, description="Fading model")
    k_factor: float = Field(default=0.0, ge=0.0, description="Rician K-factor, linear")
    speed_kmh: float = Field(default=1.0, ge=0.0, description="Train speed")
    carrier_ghz: float = Field(default=5.8, gt=0.0, description="Carrier frequency")
    slot_ms: float = Field(default=100.0, gt=0.0, description="Slot duration")
    n_oscillators: int = Field(default=32, ge=16, description="Jakes sinusoids per link")

    # Antennas and geometry
    theta_rad: float = Field(
        default=math.pi / 3, gt=0.0, le=math.pi, description="Mainbeam width"
    )
    sidelobe_db: float = Field(default=6.0, ge=0.0, description="Sidelobe loss L")
    n_bns: int = Field(default=6, ge=2, description="BNs per train")
    n_trains: int = Field(default=1, ge=1, le=2, description="Trains side by side")
    delta: float = Field(default=1.0, gt=0.0, description="In-track BN spacing")
    l_over_delta: float = Field(
        default=0.0, ge=0.0, description="Track separation over BN spacing"
    )
    cn_attachments: Optional[List[List[str]]] = Field(
        default=None, description="CN IDs per BN; one CN per BN when omitted"
    )
    K: Optional[int] = Field(
        default=None, ge=1, description="Hop range of interferers; n_bns - 1 when omitted"
    )

    # Protocol
    m_h: int = Field(default=3, ge=1, description="ND threshold M_H")
    m_ndf: int = Field(default=20, ge=1, description="NDF threshold M_NDF")
    m_t: int = Field(default=30, ge=1, description="Convergence threshold M_T")
    p_h: float = Field(default=0.15, ge=0.0, le=1.0, description="Hello probability")
    p_t: float = Field(default=0.15, ge=0.0, le=1.0, description="Topology probability")
    probe: bool = Field(default=True, description="Send Probe frames as filler")
    ndf_mode: NdfMode = Field(default=NdfMode.PER_SENDER, description="NDF counting")

    # Runs
    mode: SimulationMode = Field(
        default=SimulationMode.INAUGURATION, description="Full inauguration or ND only"
    )
    ideal: bool = Field(default=False, description="Lossless true-neighbor links only")
    max_slots: int = Field(default=5000, gt=0, description="Slot cap per trial")
    seed: int = Field(default=0, ge=0, description="Root RNG seed")
    threads: int = Field(default=1, ge=1, description="Worker processes")
    verbose: bool = Field(default=False, description="Enable verbose output")

    # Analysis
    exponent_sides: Optional[int] = Field(
        default=None, ge=1, description="Independent sides; 2 n_bns - 2 when omitted"
    )
    analysis_mode: AnalysisMode = Field(
        default=AnalysisMode.HOMOGENEOUS, description="Receiver model"
    )

    experiment: ExperimentSpec = Field(
        default_factory=ExperimentSpec, description="Sweep to run"
    )

    model_config = ConfigDict(validate_assignment=True)

    @model_validator(mode="after")
    def _check_config(self) -> "WtdpConfig":
        if self.p_h + self.p_t > 1.0 + 1e-12:
            raise ValueError("p_h + p_t must not exceed 1")
        if self.n_trains == 2 and self.l_over_delta <= 0.0:
            raise ValueError("Two-train scenarios need l_over_delta > 0")
        if self.cn_attachments is not None and len(self.cn_attachments) != self.n_bns:
            raise ValueError(
                f"cn_attachments lists {len(self.cn_attachments)} BNs, "
                f"n_bns is {self.n_bns}"
            )
        for axis in self.experiment.sweep:
            if axis != "p" and axis not in SWEEPABLE:
                raise ValueError(f"Unknown sweep axis '{axis}'")
        return self

    @property
    def effective_k(self) -> int:
        """Hop range used when K is not set explicitly."""
        return self.K if self.K is not None else self.n_bns - 1

    @property
    def effective_exponent_sides(self) -> int:
        """Sides that have a true neighbor unless set explicitly."""
        if self.exponent_sides is not None:
            return self.exponent_sides
        return 2 * self.n_bns - 2


SWEEPABLE = frozenset(
    name
    for name in WtdpConfig.model_fields
    if name
    not in ("experiment", "cn_attachments", "verbose", "threads", "analysis_mode")
)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Deep merge two dictionaries, with override taking precedence.

    Args:
        base: Base dictionary to merge into
        override: Dictionary to merge from (takes precedence)

    Returns:
        Merged dictionary
    """
    result = base.copy()

    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value

    return result


def _load_yaml_config(config_path: Path) -> Optional[Dict[str, Any]]:
    """Load configuration from a YAML file.

    Raises:
        ConfigError: If the YAML is invalid; the message carries the line number
    """
    if not config_path.exists():
        return None

    logger.info(f"Loading configuration from {config_path}")

    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config_data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"Invalid YAML in {config_path}{where}: {e}") from e

    if config_data is None:
        return {}
    if not isinstance(config_data, dict):
        raise ConfigError(f"{config_path} must contain a mapping at top level")
    return config_data


def _load_toml_config(config_path: Path) -> Optional[Dict[str, Any]]:
    """Load configuration from a TOML file.

    ``pyproject.toml`` is read from its ``[tool.wtdpsim]`` table; any other TOML
    file is read whole.

    Raises:
        ConfigError: If the TOML is invalid
    """
    if not config_path.exists():
        return None

    logger.info(f"Loading configuration from {config_path}")

    try:
        with open(config_path, "rb") as f:
            toml_data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {config_path}: {e}") from e

    if config_path.name == "pyproject.toml":
        section = toml_data.get("tool", {}).get("wtdpsim", {})
        return section if section else None
    return toml_data


def find_config_file(start_dir: Optional[Path] = None) -> Optional[Path]:
    """Find the first available configuration file.

    Searches in this order:
    1. wtdpsim.yml
    2. wtdpsim.yaml
    3. pyproject.toml (if it has a [tool.wtdpsim] section)

    Args:
        start_dir: Directory to start search from (defaults to current working dir)

    Returns:
        Path to config file or None if none found
    """
    if start_dir is None:
        start_dir = Path.cwd()

    for yaml_name in CONFIG_FILE_NAMES:
        yaml_path = start_dir / yaml_name
        if yaml_path.exists():
            logger.info(f"Found configuration file: {yaml_path}")
            return yaml_path

    toml_path = start_dir / "pyproject.toml"
    if toml_path.exists():
        try:
            if _load_toml_config(toml_path):
                logger.info(f"Found configuration in pyproject.toml: {toml_path}")
                return toml_path
        except ConfigError as e:
            logger.warning(f"Could not load pyproject.toml: {e}")

    logger.info("No configuration file found")
    return None


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{field}: {item['msg']}")
    return "; ".join(lines)


def load_config(config_path: Optional[Path] = None) -> WtdpConfig:
    """Load wtdpsim configuration from file.

    If no config path is provided, searches for config files in current directory.

    Args:
        config_path: Explicit path to config file

    Returns:
        Loaded configuration with defaults for missing values

    Raises:
        ConfigError: If the file is missing, unreadable or invalid
    """
    if config_path is None:
        config_path = find_config_file()

    if config_path is None:
        logger.info("No configuration file found, using defaults")
        return WtdpConfig()

    if not config_path.exists():
        raise ConfigError(f"Configuration file not found: {config_path}")

    if config_path.suffix in [".yml", ".yaml"]:
        config_data = _load_yaml_config(config_path)
    elif config_path.suffix == ".toml":
        config_data = _load_toml_config(config_path)
    else:
        raise ConfigError(f"Unsupported config file format: {config_path}")

    if not config_data:
        logger.info("Configuration file exists but is empty, using defaults")
        return WtdpConfig()

    try:
        config = WtdpConfig.model_validate(config_data)
    except ValidationError as e:
        raise ConfigError(
            f"Invalid configuration in {config_path}: {_format_validation_error(e)}"
        ) from e

    logger.info(f"Successfully loaded configuration from {config_path}")
    return config


def merge_config_with_args(
    config: WtdpConfig,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    trials: Optional[int] = None,
    out: Optional[Path] = None,
    trace: Optional[Path] = None,
    plot: Optional[Path] = None,
    verbose: Optional[bool] = None,
) -> WtdpConfig:
    """Merge configuration with CLI arguments, giving precedence to CLI args.

    Args:
        config: Base configuration from file
        seed: CLI root seed
        threads: CLI worker count
        trials: CLI trials per grid point
        out: CLI result table path
        trace: CLI trace path
        plot: CLI plotting script path
        verbose: CLI verbose flag

    Returns:
        Merged configuration with CLI args taking precedence

    Raises:
        ConfigError: If the merged configuration is invalid
    """
    cli_overrides: Dict[str, Any] = {}
    experiment: Dict[str, Any] = {}
    outputs: Dict[str, Any] = {}

    if seed is not None:
        cli_overrides["seed"] = seed

    if threads is not None:
        cli_overrides["threads"] = threads

    if verbose is not None:
        cli_overrides["verbose"] = verbose

    if trials is not None:
        experiment["trials"] = trials

    if out is not None:
        outputs["csv"] = out

    if trace is not None:
        outputs["trace"] = trace

    if plot is not None:
        outputs["plot"] = plot

    if outputs:
        experiment["outputs"] = outputs
    if experiment:
        cli_overrides["experiment"] = experiment

    merged_dict = _deep_merge(config.model_dump(), cli_overrides)

    try:
        return WtdpConfig.model_validate(merged_dict)
    except ValidationError as e:
        raise ConfigError(
            f"Invalid command-line options: {_format_validation_error(e)}"
        ) from e
