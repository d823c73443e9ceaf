"""Figure generation for haptoflow artifacts (CSV/VTK file contracts)."""

__version__ = "0.1.0"

from .figures import plot_contours, plot_convergence, plot_eps_sweep, plot_heatmap

__all__ = ["plot_contours", "plot_convergence", "plot_eps_sweep", "plot_heatmap", "__version__"]
