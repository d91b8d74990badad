"""Figure rendering for donflow run artifacts (CSV/JSON contracts only)."""

from .render import DIAG_COLUMNS, HEAT_COLUMNS, PlotJob, SchemaError, render

__version__ = "0.1.0"
