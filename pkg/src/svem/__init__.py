"""Stochastic virtual element methods for linear elasticity.

Polygonal and polyhedral VEM assembly, Karhunen-Loeve random fields, and
three uncertainty propagation solvers: polynomial chaos Galerkin, the
weakly intrusive alternating expansion, and Monte Carlo sampling.
"""

__version__ = "0.1.0"

from .mesh import PolyMesh, build_mesh, load_mesh, write_mesh  # noqa: E402
from .random_field import CovarianceKernel, KLExpansion, SampleBatch, draw_samples, kl_solve  # noqa: E402
from .svee import LoadSpec, SeparatedSystem, build_system, force_expansion  # noqa: E402
from .pc import generate_basis, solve_pc  # noqa: E402
from .win import IterationConfig, WINExpansion  # noqa: E402
from .win import run as run_win  # noqa: E402
from .mc import MCSolution, run_mcs  # noqa: E402
from .stats import FieldStatistics, expansion_statistics, kde_pdf, pdf_abs_error  # noqa: E402

__all__ = [
    "CovarianceKernel",
    "FieldStatistics",
    "IterationConfig",
    "KLExpansion",
    "LoadSpec",
    "MCSolution",
    "PolyMesh",
    "SampleBatch",
    "SeparatedSystem",
    "WINExpansion",
    "build_mesh",
    "build_system",
    "draw_samples",
    "expansion_statistics",
    "force_expansion",
    "generate_basis",
    "kde_pdf",
    "kl_solve",
    "load_mesh",
    "pdf_abs_error",
    "run_mcs",
    "run_win",
    "solve_pc",
    "write_mesh",
]
