"""Figure rendering for the learning-curve analytics CLI artifacts."""

from .render import PlotJob, SchemaError, build_figure, render

__all__ = ["PlotJob", "SchemaError", "build_figure", "render"]
