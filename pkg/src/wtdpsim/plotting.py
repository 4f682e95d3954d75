"""Plot-script rendering for result tables."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import jinja2
import pandas as pd

from .experiments import ANALYSIS_COLUMNS, SIMULATION_COLUMNS

logger = logging.getLogger("wtdpsim.plotting")

PLOT_TEMPLATE = "plot_sweep.py.jinja2"
PACKAGE_TEMPLATES = Path(__file__).parent / "templates"

# Columns worth a curve, with the error column drawn as a band
_PLOTTED = {
    "nd_success": "nd_success_se",
    "inaug_success": "inaug_success_se",
    "mean_nd_slots": None,
    "mean_inaug_slots": None,
    "nd_time_to_success_restart": None,
    "inaug_time_to_success_restart": None,
    "q_star": None,
    "e_t_star": None,
    "e_t_suc_star": None,
}


class PlotTemplateError(Exception):
    """Base exception for plot template errors."""


class PlotTemplateNotFoundError(PlotTemplateError):
    """Exception raised when a plot template cannot be found."""


class PlotTemplateValidationError(PlotTemplateError):
    """Exception raised when a plot template fails validation."""


class PlotTemplateLoader:
    """Loads and renders plotting-script templates."""

    def __init__(self, template_dirs: Optional[List[Path]] = None) -> None:
        """Initialise the template loader.

        Args:
            template_dirs: Directories searched before the packaged templates
        """
        self.template_dirs = list(template_dirs or []) + [
            Path.cwd() / "templates",
            PACKAGE_TEMPLATES,
        ]
        existing_dirs = [str(d) for d in self.template_dirs if d.exists()]
        logger.info(f"Plot template search paths: {existing_dirs}")

        self.env = jinja2.Environment(
            loader=jinja2.FileSystemLoader(existing_dirs),
            autoescape=False,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )
        self.env.filters["pyrepr"] = repr

    def load_template(self, template_path: str) -> jinja2.Template:
        """Load a template by path.

        Raises:
            PlotTemplateNotFoundError: If the template cannot be found
        """
        try:
            return self.env.get_template(template_path)
        except jinja2.TemplateNotFound as e:
            available = ", ".join(str(t) for t in self.find_templates()) or "none"
            raise PlotTemplateNotFoundError(
                f"Plot template not found: {template_path} (available: {available})"
            ) from e

    def render_template(self, template_path: str, context: Dict[str, Any]) -> str:
        """Render a template with the given context.

        Raises:
            PlotTemplateNotFoundError: If the template cannot be found
            PlotTemplateError: If rendering fails
        """
        template = self.load_template(template_path)
        try:
            rendered = template.render(**context)
        except jinja2.TemplateError as e:
            logger.exception(f"Plot template rendering failed for {template_path}")
            raise PlotTemplateError(f"Template rendering failed: {e}") from e
        logger.info(f"Rendered {template_path} ({len(rendered)} characters)")
        return rendered

    def find_templates(self, pattern: str = "*.jinja2") -> List[Path]:
        """Find all templates matching a pattern in the search directories."""
        templates = set()
        for template_dir in self.template_dirs:
            if template_dir.exists():
                templates.update(
                    path.relative_to(template_dir)
                    for path in template_dir.glob(pattern)
                    if path.is_file()
                )
        return sorted(templates)

    def validate_template(self, template_path: str) -> None:
        """Validate a template for syntax errors.

        Raises:
            PlotTemplateValidationError: If the template has syntax errors
            PlotTemplateNotFoundError: If the template cannot be found
        """
        try:
            self.load_template(template_path).new_context()
        except jinja2.TemplateSyntaxError as e:
            raise PlotTemplateValidationError(
                f"Template syntax error in {template_path}: {e}"
            ) from e


def plot_context(table: pd.DataFrame, csv_path: Path, title: str) -> Dict[str, Any]:
    """Work out which columns of a result table the script should plot.

    The first column that is not a result column becomes the x axis; a second
    such column, if any, splits the curves into one series per value.

    Raises:
        PlotTemplateError: If the table has no sweep axis or nothing to plot
    """
    results = set(SIMULATION_COLUMNS) | set(ANALYSIS_COLUMNS)
    axes = [c for c in table.columns if c not in results]
    if not axes:
        raise PlotTemplateError(f"{csv_path} has no sweep axis to plot against")
    curves = [
        {"column": column, "error": error if error in table.columns else None}
        for column, error in _PLOTTED.items()
        if column in table.columns and table[column].notna().any()
    ]
    if not curves:
        raise PlotTemplateError(f"{csv_path} has no plottable result columns")
    return {
        "csv_path": str(csv_path),
        "title": title,
        "x": axes[0],
        "series": axes[1] if len(axes) > 1 else None,
        "curves": curves,
    }


def render_plot_script(
    csv_path: Path,
    output: Path,
    title: Optional[str] = None,
    loader: Optional[PlotTemplateLoader] = None,
) -> Path:
    """Render a standalone matplotlib script for a result table.

    Args:
        csv_path: Result table written by ``analyze`` or ``simulate``
        output: Where to write the script
        title: Figure title; the CSV stem when omitted
        loader: Template loader; the packaged templates when omitted

    Returns:
        Path to the written script

    Raises:
        PlotTemplateError: If the table cannot be plotted or rendering fails
    """
    try:
        table = pd.read_csv(csv_path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise PlotTemplateError(f"Cannot read result table {csv_path}: {e}") from e

    loader = loader or PlotTemplateLoader()
    context = plot_context(table, csv_path, title or csv_path.stem)
    script = loader.render_template(PLOT_TEMPLATE, context)

    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(script, encoding="utf-8")
    logger.info(f"Wrote plotting script to {output}")
    return output
