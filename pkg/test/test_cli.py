"""Tests for cli module."""

from pathlib import Path
from tempfile import TemporaryDirectory

import pytest
from typer.testing import CliRunner

from wtdpsim.analysis import NonConvergentError, SeriesTruncatedError
from wtdpsim.cli import (
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_NONCONVERGENT,
    app,
    exit_code_for,
)
from wtdpsim.config import ConfigError

runner = CliRunner()

SMALL_SWEEP = """
n_bns: 3
max_slots: 1500
experiment:
  name: small
  trials: 3
  sweep:
    m_h: [1, 2]
"""


def _write(directory: Path, name: str, content: str) -> Path:
    path = directory / name
    path.write_text(content)
    return path


class TestAnalyzeCommand:
    """Tests for analyze command."""

    def test_analyze_to_file(self):
        """Tests the analytical sweep written to a CSV file."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            config = _write(temp_path, "mh.yml", SMALL_SWEEP)
            out = temp_path / "mh.csv"

            result = runner.invoke(
                app, ["analyze", "--config", str(config), "--out", str(out)]
            )

            assert result.exit_code == 0
            assert "✅ Wrote results to" in result.stdout
            lines = out.read_text().splitlines()
            assert lines[0] == "m_h,q_star,e_t_star,e_t_suc_star"
            assert len(lines) == 3

    def test_analyze_to_stdout(self):
        """Without --out the table goes to stdout."""
        with TemporaryDirectory() as temp_dir:
            config = _write(Path(temp_dir), "mh.yml", SMALL_SWEEP)

            result = runner.invoke(app, ["analyze", "-c", str(config)])

            assert result.exit_code == 0
            assert result.stdout.startswith("m_h,q_star,e_t_star,e_t_suc_star")

    def test_analyze_with_plot(self):
        """--plot renders a script next to the table."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            config = _write(temp_path, "mh.yml", SMALL_SWEEP)
            out = temp_path / "mh.csv"
            plot = temp_path / "mh.plot.py"

            result = runner.invoke(
                app,
                ["analyze", "-c", str(config), "-o", str(out), "--plot", str(plot)],
            )

            assert result.exit_code == 0
            assert "📈 Wrote plotting script" in result.stdout
            assert "q_star" in plot.read_text()

    def test_unheard_neighbor_exits_nonconvergent(self):
        """p_H = 0 is reported as numerical non-convergence."""
        with TemporaryDirectory() as temp_dir:
            config = _write(Path(temp_dir), "dead.yml", "p_h: 0.0\np_t: 0.3\n")

            result = runner.invoke(app, ["analyze", "-c", str(config)])

            assert result.exit_code == EXIT_NONCONVERGENT
            assert "❌ Analysis failed:" in result.output

    def test_two_trains_unsupported(self):
        """The closed form refuses two-train scenarios as a configuration error."""
        with TemporaryDirectory() as temp_dir:
            config = _write(
                Path(temp_dir), "two.yml", "n_trains: 2\nl_over_delta: 1.0\n"
            )

            result = runner.invoke(app, ["analyze", "-c", str(config)])

            assert result.exit_code == EXIT_CONFIG

    def test_invalid_config_exits_with_config_error(self):
        """Validation errors name the field and exit with code 2."""
        with TemporaryDirectory() as temp_dir:
            config = _write(Path(temp_dir), "bad.yml", "m_h: 0\n")

            result = runner.invoke(app, ["analyze", "-c", str(config)])

            assert result.exit_code == EXIT_CONFIG
            assert "m_h" in result.output

    def test_missing_config_file(self):
        """A missing --config file is a configuration error."""
        result = runner.invoke(app, ["analyze", "-c", "/nonexistent/wtdpsim.yml"])

        assert result.exit_code == EXIT_CONFIG
        assert "not found" in result.output


class TestSimulateCommand:
    """Tests for simulate command."""

    def test_simulate_to_file(self):
        """Tests a small simulated sweep written to a CSV file."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            config = _write(temp_path, "mh.yml", SMALL_SWEEP)
            out = temp_path / "mh.csv"

            result = runner.invoke(
                app, ["simulate", "-c", str(config), "-o", str(out), "--seed", "4"]
            )

            assert result.exit_code == 0
            header = out.read_text().splitlines()[0]
            assert header.startswith("m_h,trials,nd_success,nd_success_se")

    def test_same_seed_is_byte_identical(self):
        """Two runs with one seed produce the same file."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            config = _write(temp_path, "mh.yml", SMALL_SWEEP)
            outputs = [temp_path / "a.csv", temp_path / "b.csv"]

            for out in outputs:
                result = runner.invoke(
                    app,
                    ["simulate", "-c", str(config), "-o", str(out), "--seed", "11"],
                )
                assert result.exit_code == 0

            assert outputs[0].read_bytes() == outputs[1].read_bytes()

    def test_threads_do_not_change_results(self):
        """Worker processes give the same table as a serial run."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            config = _write(temp_path, "mh.yml", SMALL_SWEEP)
            serial, parallel = temp_path / "serial.csv", temp_path / "parallel.csv"

            runner.invoke(app, ["simulate", "-c", str(config), "-o", str(serial)])
            runner.invoke(
                app, ["simulate", "-c", str(config), "-o", str(parallel), "-j", "2"]
            )

            assert serial.read_bytes() == parallel.read_bytes()

    def test_trace_and_trials_override(self):
        """--trials overrides the file and --trace writes JSON lines."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            config = _write(temp_path, "mh.yml", SMALL_SWEEP)
            out = temp_path / "mh.csv"
            trace = temp_path / "trace.jsonl"

            result = runner.invoke(
                app,
                [
                    "simulate",
                    "-c",
                    str(config),
                    "-o",
                    str(out),
                    "-n",
                    "1",
                    "--trace",
                    str(trace),
                ],
            )

            assert result.exit_code == 0
            assert "🧾 Wrote trace" in result.stdout
            rows = out.read_text().splitlines()[1:]
            assert all(row.split(",")[1] == "1" for row in rows)
            assert trace.read_text().count('"type":"trial"') == 2

    def test_invalid_threads(self):
        """--threads 0 is rejected as a configuration error."""
        with TemporaryDirectory() as temp_dir:
            config = _write(Path(temp_dir), "mh.yml", SMALL_SWEEP)

            result = runner.invoke(app, ["simulate", "-c", str(config), "-j", "0"])

            assert result.exit_code == EXIT_CONFIG
            assert "❌ Simulation failed:" in result.output


class TestExperimentsCommand:
    """Tests for experiments command."""

    def test_lists_experiments(self):
        """Each file is listed with its grid size."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            _write(temp_path, "mh.yml", SMALL_SWEEP)

            result = runner.invoke(app, ["experiments", str(temp_path)])

            assert result.exit_code == 0
            assert "🧪 Found 1 experiments:" in result.stdout
            assert "mh.yml: small [Custom] 2 points x 3 trials" in result.stdout

    def test_empty_directory(self):
        """An empty directory is reported, not an error."""
        with TemporaryDirectory() as temp_dir:
            result = runner.invoke(app, ["experiments", temp_dir])

            assert result.exit_code == 0
            assert "No experiments found" in result.stdout

    def test_missing_directory(self):
        """A missing directory fails."""
        result = runner.invoke(app, ["experiments", "/nonexistent/experiments"])

        assert result.exit_code == EXIT_FAILURE
        assert "❌ Failed to list experiments:" in result.output


class TestPlotCommand:
    """Tests for plot command."""

    def test_default_output_path(self):
        """The script lands next to the table by default."""
        with TemporaryDirectory() as temp_dir:
            temp_path = Path(temp_dir)
            csv_path = _write(temp_path, "mh.csv", "m_h,q_star\n1,0.5\n2,0.6\n")

            result = runner.invoke(app, ["plot", str(csv_path)])

            assert result.exit_code == 0
            assert (temp_path / "mh.plot.py").exists()

    def test_table_without_axis(self):
        """A table of results only cannot be plotted."""
        with TemporaryDirectory() as temp_dir:
            csv_path = _write(Path(temp_dir), "bare.csv", "q_star\n0.5\n")

            result = runner.invoke(app, ["plot", str(csv_path)])

            assert result.exit_code == EXIT_FAILURE
            assert "❌ Plot rendering failed:" in result.output


class TestValidateCommand:
    """Tests for validate command."""

    def test_validate_success(self):
        """Tests successful configuration validation."""
        with TemporaryDirectory() as temp_dir:
            config = _write(Path(temp_dir), "mh.yml", SMALL_SWEEP)

            result = runner.invoke(app, ["validate", str(config)])

            assert result.exit_code == 0
            assert "✅ Configuration is valid:" in result.stdout
            assert "2 grid points, 3 trials each" in result.stdout

    def test_validate_yaml_error_reports_line(self):
        """Syntax errors carry the line number."""
        with TemporaryDirectory() as temp_dir:
            config = _write(Path(temp_dir), "bad.yml", "n_bns: 3\nm_h: [1,\n")

            result = runner.invoke(app, ["validate", str(config)])

            assert result.exit_code == EXIT_CONFIG
            assert "❌ Configuration validation failed:" in result.output
            assert "line" in result.output

    def test_validate_unknown_axis(self):
        """Unknown sweep axes are reported."""
        with TemporaryDirectory() as temp_dir:
            config = _write(
                Path(temp_dir), "bad.yml", "experiment:\n  sweep:\n    speed: [1]\n"
            )

            result = runner.invoke(app, ["validate", str(config)])

            assert result.exit_code == EXIT_CONFIG
            assert "Unknown sweep axis 'speed'" in result.output


class TestExitCodes:
    """Tests for exit_code_for."""

    @pytest.mark.parametrize(
        "error,code",
        [
            pytest.param(ConfigError("x"), EXIT_CONFIG, id="config"),
            pytest.param(NonConvergentError("x"), EXIT_NONCONVERGENT, id="nonconvergent"),
            pytest.param(SeriesTruncatedError("x"), EXIT_NONCONVERGENT, id="truncated"),
            pytest.param(RuntimeError("x"), EXIT_FAILURE, id="other"),
        ],
    )
    def test_mapping(self, error, code):
        """Errors map onto documented exit codes."""
        assert exit_code_for(error) == code


class TestCLIIntegration:
    """Integration tests for CLI."""

    def test_help_message(self):
        """Tests that help message is displayed."""
        result = runner.invoke(app, ["--help"])

        assert result.exit_code == 0
        assert "Wireless train topology discovery" in result.stdout
        for command in ("analyze", "simulate", "experiments", "plot", "validate"):
            assert command in result.stdout

    def test_command_help_messages(self):
        """Tests help messages for individual commands."""
        result = runner.invoke(app, ["simulate", "--help"])
        assert result.exit_code == 0
        assert "--trace" in result.stdout
        assert "--seed" in result.stdout

        result = runner.invoke(app, ["analyze", "--help"])
        assert result.exit_code == 0
        assert "--out" in result.stdout
