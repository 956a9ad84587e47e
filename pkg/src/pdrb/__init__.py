"""Primal-dual reduced basis methods for parametric diffusion.

Certified reduced models whose error estimator is the exact combined
primal-dual energy error of the FE approximation.
"""

__version__ = "0.1.0"

from .problem import Parameter, Discretization, lshape_problem, manufactured_problem  # noqa: E402
from .greedy import GreedyConfig, run_greedy  # noqa: E402
from .rb import RBModel, build_offline, online_solve, load_model, save_model  # noqa: E402

__all__ = ["Parameter", "Discretization", "lshape_problem", "manufactured_problem",
           "GreedyConfig", "run_greedy", "RBModel", "build_offline", "online_solve",
           "load_model", "save_model", "__version__"]
