"""Figure rendering for simulator CSV artifacts: free-evolution panels,
control-vs-social-cost trade-off curves, and the clustering study."""

from nudgeplots.render import FigureSpec, SchemaError, build_figure, render

__all__ = ["FigureSpec", "SchemaError", "build_figure", "render"]
