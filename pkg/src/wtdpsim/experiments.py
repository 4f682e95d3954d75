"""Sweep expansion, analytical and simulated experiment runs, result files."""

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ValidationError

from .analysis import (
    AnalysisInput,
    AnalysisMode,
    UnsupportedAnalysisError,
    network_metrics,
)
from .channel import AntennaPattern, ChannelParams, FadingKind
from .config import ConfigError, WtdpConfig, _deep_merge
from .model import ProtocolParams, default_ground_truth
from .protocol import NodeEvent
from .simulator import (
    AntennaRef,
    BatchResult,
    FrequencyPlan,
    Scenario,
    interferer_set,
    parameter_grid,
    run_grid,
)

logger = logging.getLogger("wtdpsim.experiments")

FLOAT_FORMAT = "%.10g"
SIMULATION_COLUMNS = [
    "trials",
    "nd_success",
    "nd_success_se",
    "inaug_success",
    "inaug_success_se",
    "mean_nd_slots",
    "mean_inaug_slots",
    "nd_time_to_success_restart",
    "nd_time_to_success_ratio",
    "inaug_time_to_success_restart",
    "inaug_time_to_success_ratio",
    "red_flag_rate",
    "truncated_rate",
]
ANALYSIS_COLUMNS = ["q_star", "e_t_star", "e_t_suc_star"]


class ExperimentError(Exception):
    """Base exception for experiment errors."""


class TraceLine(BaseModel):
    """One line of a JSON-lines trace file."""

    type: Literal["event", "trial"]
    grid: int
    trial: int
    slot: Optional[int] = None
    mac: Optional[str] = None
    event: Optional[NodeEvent] = None
    summary: Optional[Dict[str, Any]] = None


def find_experiment_files(directory: Path) -> List[Path]:
    """Find experiment configuration files in a directory.

    Args:
        directory: Directory to search

    Returns:
        Sorted YAML and TOML files directly inside ``directory``

    Raises:
        NotADirectoryError: If directory doesn't exist or isn't a directory
    """
    if not directory.is_dir():
        logger.error(f"Experiment directory not found: {directory}")
        raise NotADirectoryError(f"Directory not found: {directory}")

    files = sorted(
        path
        for path in directory.iterdir()
        if path.is_file() and path.suffix in (".yml", ".yaml", ".toml")
    )
    logger.info(f"Found {len(files)} experiment files in {directory}")
    return files


def apply_point(config: WtdpConfig, point: Dict[str, Any]) -> WtdpConfig:
    """Return ``config`` with the values of one grid point.

    ``p`` is shorthand for ``p_h = p_t = p / 2``.

    Raises:
        ConfigError: If the resulting configuration is invalid
    """
    update = dict(point)
    if "p" in update:
        p = update.pop("p")
        update["p_h"] = update["p_t"] = p / 2.0
    try:
        return WtdpConfig.model_validate(_deep_merge(config.model_dump(), update))
    except ValidationError as e:
        raise ConfigError(f"Invalid grid point {point}: {e}") from e


def grid_points(config: WtdpConfig) -> List[Tuple[Dict[str, Any], WtdpConfig]]:
    """Expand the experiment sweep into (point, configuration) pairs.

    The first axis varies slowest. Without a sweep the base configuration is
    the single grid point.
    """
    sweep = config.experiment.sweep
    if not sweep:
        return [({}, config)]
    points = parameter_grid(sweep)
    logger.info(f"Sweep over {list(sweep)} expands to {len(points)} grid points")
    return [(point, apply_point(config, point)) for point in points]


def build_scenario(config: WtdpConfig, trace: bool = False) -> Scenario:
    """Build the simulator scenario described by ``config``."""
    trains = tuple(
        default_ground_truth(
            config.n_bns, train=t, cn_attachments=config.cn_attachments
        )
        for t in range(1, config.n_trains + 1)
    )
    return Scenario(
        trains=trains,
        delta=config.delta,
        l_over_delta=config.l_over_delta,
        channel=ChannelParams(
            snr0_db=config.snr0_db,
            eta=config.eta,
            F=config.F,
            R=config.R,
            fading=config.fading,
            k_factor=config.k_factor,
            speed_kmh=config.speed_kmh,
            slot_ms=config.slot_ms,
            carrier_ghz=config.carrier_ghz,
            n_oscillators=config.n_oscillators,
        ),
        antenna=AntennaPattern(theta=config.theta_rad, sidelobe_db=config.sidelobe_db),
        proto=ProtocolParams(
            m_h=config.m_h,
            m_ndf=config.m_ndf,
            m_t=config.m_t,
            p_h=config.p_h,
            p_t=config.p_t,
            probe=config.probe,
            ndf_mode=config.ndf_mode,
        ),
        K=config.effective_k,
        max_slots=config.max_slots,
        seed=config.seed,
        mode=config.mode,
        ideal=config.ideal,
        trace=trace,
    )


def build_analysis_input(config: WtdpConfig) -> AnalysisInput:
    """Build the closed-form model input described by ``config``.

    Raises:
        UnsupportedAnalysisError: For two-train or Rician scenarios
    """
    if config.n_trains > 1:
        raise UnsupportedAnalysisError(
            "The closed-form model covers a single train; simulate two-train scenarios"
        )
    if config.fading is FadingKind.RICIAN:
        raise UnsupportedAnalysisError(
            "The closed-form model assumes Rayleigh fading; simulate Rician channels"
        )

    receivers = None
    if config.analysis_mode is AnalysisMode.PER_RECEIVER:
        scenario = build_scenario(config)
        plan = FrequencyPlan(F=config.F)
        receivers = tuple(
            len(
                interferer_set(
                    AntennaRef(
                        train=0,
                        position=scenario.trains[0].bns.index(mac) + 1,
                        pointing=direction,
                    ),
                    plan,
                    scenario,
                )
            )
            for mac, direction in scenario.trains[0].sides()
        )

    in_range = math.ceil((config.n_bns - 1) / config.F)
    return AnalysisInput(
        snr0_lin=10.0 ** (config.snr0_db / 10.0),
        eta=config.eta,
        F=config.F,
        K=min(config.effective_k, in_range),
        p_h=config.p_h,
        p_t=config.p_t,
        R=config.R,
        m_h=config.m_h,
        exponent_sides=config.effective_exponent_sides,
        mode=config.analysis_mode,
        receivers=receivers,
    )


def run_analysis_sweep(config: WtdpConfig) -> pd.DataFrame:
    """Evaluate the closed-form model at every grid point.

    Returns:
        One row per grid point: sweep axes, then q_star, e_t_star, e_t_suc_star
    """
    rows = []
    for point, point_config in grid_points(config):
        metrics = network_metrics(build_analysis_input(point_config))
        logger.info(f"Analysis at {point}: q*={metrics.q_star:.6f}")
        rows.append({**point, **metrics.model_dump()})
    axes = list(config.experiment.sweep)
    return pd.DataFrame(rows, columns=axes + ANALYSIS_COLUMNS)


def run_simulation_sweep(
    config: WtdpConfig, trace: bool = False
) -> Tuple[pd.DataFrame, BatchResult]:
    """Simulate every grid point of the experiment.

    Args:
        config: Configuration with the experiment sweep
        trace: Keep protocol events for the trace file

    Returns:
        Tuple of (one row per grid point, raw batch result)
    """
    grid = [
        (point, build_scenario(point_config, trace=trace))
        for point, point_config in grid_points(config)
    ]
    result = run_grid(grid, config.experiment.trials, config.threads)
    rows = [
        {**stats.point, **stats.model_dump(include=set(SIMULATION_COLUMNS))}
        for stats in result.points
    ]
    axes = list(config.experiment.sweep)
    return pd.DataFrame(rows, columns=axes + SIMULATION_COLUMNS), result


def write_table(table: pd.DataFrame, path: Path) -> Path:
    """Write a result table as CSV with a fixed float format.

    Raises:
        ExperimentError: If the file cannot be written
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise ExperimentError(f"Failed to write {path}: {e}") from e
    logger.info(f"Wrote {len(table)} rows to {path}")
    return path


def trace_lines(result: BatchResult) -> List[TraceLine]:
    """Flatten the events and per-trial summaries of a batch."""
    lines = []
    for grid, runs in enumerate(result.runs):
        for run in runs:
            lines.extend(
                TraceLine(
                    type="event",
                    grid=grid,
                    trial=run.trial,
                    slot=record.slot,
                    mac=record.mac,
                    event=record.event,
                )
                for record in run.events
            )
            lines.append(
                TraceLine(
                    type="trial",
                    grid=grid,
                    trial=run.trial,
                    summary=run.model_dump(
                        mode="json", exclude={"events", "identifications", "trial"}
                    ),
                )
            )
    return lines


def write_trace(result: BatchResult, path: Path) -> Path:
    """Write a JSON-lines trace of a batch.

    Raises:
        ExperimentError: If the file cannot be written
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", encoding="utf-8") as f:
            for line in trace_lines(result):
                f.write(line.model_dump_json(exclude_none=True))
                f.write("\n")
    except OSError as e:
        raise ExperimentError(f"Failed to write {path}: {e}") from e
    logger.info(f"Wrote trace to {path}")
    return path
