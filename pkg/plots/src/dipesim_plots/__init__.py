"""Figure rendering for dipesim harness CSVs."""

from .figures import (
    KINDS,
    PlotInputError,
    PlotSpec,
    checks_figure,
    error_figure,
    least_squares_slope,
    load_rows,
    netsim_figure,
    render,
    variance_figure,
)

__version__ = "0.1.0"
