"""Typer-based CLI for wtdpsim."""

import logging
from importlib.metadata import version
from pathlib import Path
from typing import Annotated, Optional

import typer

from .analysis import (
    NonConvergentError,
    SeriesTruncatedError,
    UnsupportedAnalysisError,
)
from .config import ConfigError, WtdpConfig, load_config, merge_config_with_args
from .experiments import (
    FLOAT_FORMAT,
    find_experiment_files,
    grid_points,
    run_analysis_sweep,
    run_simulation_sweep,
    write_table,
    write_trace,
)
from .plotting import render_plot_script

logger = logging.getLogger("wtdpsim.cli")

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGENT = 3


def version_callback(value: bool) -> None:
    """Print version and exit if --version is provided."""
    if value:
        typer.echo(f"wtdpsim version {version('wtdpsim')}")
        raise typer.Exit()


def setup_logging(verbose: bool = False) -> None:
    """Set up logging configuration.

    Args:
        verbose: Enable verbose logging if True
    """
    level = logging.INFO if verbose else logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(name)s: %(message)s",
        handlers=[logging.StreamHandler()],
    )


def exit_code_for(error: Exception) -> int:
    """Map an exception to the process exit code."""
    if isinstance(error, (ConfigError, UnsupportedAnalysisError)):
        return EXIT_CONFIG
    if isinstance(error, (NonConvergentError, SeriesTruncatedError)):
        return EXIT_NONCONVERGENT
    return EXIT_FAILURE


app = typer.Typer(
    name="wtdpsim",
    help="Wireless train topology discovery: simulation and analysis",
    no_args_is_help=True,
)

ConfigOption = Annotated[
    Optional[Path],
    typer.Option("--config", "-c", help="Configuration file (YAML or TOML)"),
]
OutOption = Annotated[
    Optional[Path], typer.Option("--out", "-o", help="CSV file for the results")
]
PlotOption = Annotated[
    Optional[Path],
    typer.Option("--plot", help="Also render a plotting script to this path"),
]
VerboseOption = Annotated[
    Optional[bool], typer.Option("--verbose", "-v", help="Enable verbose output")
]


@app.callback()
def main_callback(
    version: Annotated[
        Optional[bool],
        typer.Option(
            "--version", callback=version_callback, is_eager=True, help="Show version"
        ),
    ] = None,
) -> None:
    """Main callback to handle global options."""
    pass


def _finish(config: WtdpConfig, table_csv: str, out: Optional[Path]) -> None:
    plot = config.experiment.outputs.plot
    if out is None:
        typer.echo(table_csv, nl=False)
        if plot is not None:
            logger.warning("Plot scripts need a CSV file; pass --out to render one")
        return
    typer.echo(f"✅ Wrote results to {out}")
    if plot is not None:
        render_plot_script(out, plot, title=config.experiment.name)
        typer.echo(f"📈 Wrote plotting script to {plot}")


@app.command()
def analyze(
    config_path: ConfigOption = None,
    out: OutOption = None,
    plot: PlotOption = None,
    verbose: VerboseOption = None,
) -> None:
    """Evaluate the closed-form neighbor-discovery model over the sweep.

    Configuration is loaded from --config, wtdpsim.yml/wtdpsim.yaml or
    pyproject.toml. CLI arguments override configuration file values.
    """
    try:
        config = merge_config_with_args(
            load_config(config_path), out=out, plot=plot, verbose=verbose
        )
        if config.verbose:
            setup_logging(verbose=True)

        logger.info(f"Analysing experiment '{config.experiment.name}'")
        table = run_analysis_sweep(config)
        csv_path = config.experiment.outputs.csv
        if csv_path is not None:
            write_table(table, csv_path)
        _finish(
            config,
            table.to_csv(index=False, float_format=FLOAT_FORMAT),
            csv_path,
        )

    except Exception as e:
        logger.exception("Analysis failed with exception")
        typer.echo(f"❌ Analysis failed: {e}", err=True)
        raise typer.Exit(exit_code_for(e)) from e


@app.command()
def simulate(
    config_path: ConfigOption = None,
    out: OutOption = None,
    trace: Annotated[
        Optional[Path],
        typer.Option("--trace", help="JSON-lines file for protocol events"),
    ] = None,
    seed: Annotated[
        Optional[int], typer.Option("--seed", help="Root RNG seed")
    ] = None,
    threads: Annotated[
        Optional[int], typer.Option("--threads", "-j", help="Worker processes")
    ] = None,
    trials: Annotated[
        Optional[int], typer.Option("--trials", "-n", help="Trials per grid point")
    ] = None,
    plot: PlotOption = None,
    verbose: VerboseOption = None,
) -> None:
    """Run Monte-Carlo inauguration trials over the sweep.

    Configuration is loaded from --config, wtdpsim.yml/wtdpsim.yaml or
    pyproject.toml. CLI arguments override configuration file values.
    """
    try:
        config = merge_config_with_args(
            load_config(config_path),
            seed=seed,
            threads=threads,
            trials=trials,
            out=out,
            trace=trace,
            plot=plot,
            verbose=verbose,
        )
        if config.verbose:
            setup_logging(verbose=True)

        outputs = config.experiment.outputs
        logger.info(
            f"Simulating experiment '{config.experiment.name}' "
            f"({config.experiment.trials} trials per point, seed {config.seed})"
        )
        table, result = run_simulation_sweep(config, trace=outputs.trace is not None)
        if outputs.csv is not None:
            write_table(table, outputs.csv)
        if outputs.trace is not None:
            write_trace(result, outputs.trace)
            typer.echo(f"🧾 Wrote trace to {outputs.trace}")
        _finish(
            config,
            table.to_csv(index=False, float_format=FLOAT_FORMAT),
            outputs.csv,
        )

    except Exception as e:
        logger.exception("Simulation failed with exception")
        typer.echo(f"❌ Simulation failed: {e}", err=True)
        raise typer.Exit(exit_code_for(e)) from e


@app.command()
def experiments(
    directory: Annotated[
        Path, typer.Argument(help="Directory holding experiment files")
    ] = Path("experiments"),
    verbose: VerboseOption = None,
) -> None:
    """List experiment files with their design, grid size and trial count."""
    try:
        if verbose:
            setup_logging(verbose=True)

        files = find_experiment_files(directory)
        if not files:
            typer.echo("No experiments found")
            return

        typer.echo(f"🧪 Found {len(files)} experiments:")
        for path in files:
            config = load_config(path)
            spec = config.experiment
            typer.echo(
                f"  {path.name}: {spec.name} [{spec.kind.value}] "
                f"{len(grid_points(config))} points x {spec.trials} trials"
            )

    except Exception as e:
        logger.exception("Experiment discovery failed with exception")
        typer.echo(f"❌ Failed to list experiments: {e}", err=True)
        raise typer.Exit(exit_code_for(e)) from e


@app.command()
def plot(
    csv_path: Annotated[Path, typer.Argument(help="Result table to plot")],
    out: Annotated[
        Optional[Path],
        typer.Option("--out", "-o", help="Script path (default: <csv>.plot.py)"),
    ] = None,
    title: Annotated[
        Optional[str], typer.Option("--title", help="Figure title")
    ] = None,
    verbose: VerboseOption = None,
) -> None:
    """Render a standalone matplotlib script for a result table."""
    try:
        if verbose:
            setup_logging(verbose=True)

        target = out or csv_path.with_suffix(".plot.py")
        render_plot_script(csv_path, target, title=title)
        typer.echo(f"📈 Wrote plotting script to {target}")

    except Exception as e:
        logger.exception("Plot rendering failed with exception")
        typer.echo(f"❌ Plot rendering failed: {e}", err=True)
        raise typer.Exit(exit_code_for(e)) from e


@app.command()
def validate(
    config_path: Annotated[Path, typer.Argument(help="Configuration file to check")],
    verbose: VerboseOption = None,
) -> None:
    """Validate a configuration file and report the grid it expands to."""
    try:
        if verbose:
            setup_logging(verbose=True)

        config = load_config(config_path)
        points = grid_points(config)
        typer.echo(
            f"✅ Configuration is valid: {config_path} "
            f"({len(points)} grid points, {config.experiment.trials} trials each)"
        )

    except ConfigError as e:
        logger.exception("Configuration validation failed with exception")
        typer.echo(f"❌ Configuration validation failed: {e}", err=True)
        raise typer.Exit(EXIT_CONFIG) from e
    except Exception as e:
        logger.exception("Validation error")
        typer.echo(f"❌ Validation error: {e}", err=True)
        raise typer.Exit(exit_code_for(e)) from e


def main() -> None:
    """Main entry point for the CLI."""
    app()
