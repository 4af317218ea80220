"""Convergence-figure rendering for experiment CSV series.

Input files follow the harness schema: optional `# key=value` comment lines,
then the exact header `k,mean_sq_dist,stderr,envelope,beta_k`, then one row
per checkpoint. The envelope column may be empty where no bound applies.
"""

from .series import CSV_HEADER, SchemaError, SeriesFile, read_series
from .figures import plot_convergence

__all__ = [
    "CSV_HEADER",
    "SchemaError",
    "SeriesFile",
    "read_series",
    "plot_convergence",
]
__version__ = "0.1.0"
