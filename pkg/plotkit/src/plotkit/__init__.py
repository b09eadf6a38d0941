"""Figure rendering for softprune experiment artifacts."""

from .figures import FigureSpec, PlotkitError, render

__all__ = ["FigureSpec", "PlotkitError", "render"]

__version__ = "0.1.0"
