"""Offline figure regeneration from pipeline output files."""

from .figures import FIGURES, build_figure, render

__all__ = ["FIGURES", "build_figure", "render"]
