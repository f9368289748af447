"""Nonlinear point defects on metric graphs: P1 discretization, constrained minimization,
explicit certificates and threshold experiments."""

__version__ = "0.1.0"

from .graph import (MetricGraph, gen_grid_window, gen_star, gen_zperiodic_window, ladder_cell,  # noqa: F401
                    line_cell, load_graph)
from .fem import assemble, functionals, mesh  # noqa: F401
from .energy import SolverOptions, minimize  # noqa: F401
