"""Stochastic optimal control on finite scenario trees.

``SCOTKIT_THREADS`` caps the BLAS/OpenMP thread pools; it has to be set
before numpy is first imported to take effect.
"""
import os as _os

_threads = _os.environ.get("SCOTKIT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .kernels import BACKEND  # noqa: E402
from .tree import AdaptedProcess, NoiseSpec, ScenarioTree, build_tree  # noqa: E402
from .control import ControlProblem, rollout, cost  # noqa: E402
from .adjoint import backward_adjoint, kkt_residual, reduced_gradient, solve_projected_gradient  # noqa: E402
from .problem_file import load_problem  # noqa: E402

__all__ = [
    "BACKEND", "AdaptedProcess", "NoiseSpec", "ScenarioTree", "build_tree", "ControlProblem",
    "rollout", "cost", "backward_adjoint", "kkt_residual", "reduced_gradient",
    "solve_projected_gradient", "load_problem",
]
