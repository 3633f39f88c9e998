"""Bayesian inversion of poroelastic subsurface properties.

Building blocks: structured grids and coarse neighborhoods (``mesh``),
Karhunen-Loeve random porosity fields and material laws (``randfield``), a
fine-grid Biot solver (``biot_fem``), multiscale model reduction
(``gmsfem``), single- and two-stage random-walk samplers (``mcmc``), a
convolutional surrogate (``surrogate``), binary artifact persistence
(``container``) and the batch CLI (``cli``).
"""

from .biot_fem import (BoundarySpec, FineSolution, FineSystem, PhysicalParams,
                       TimeSteppingConfig, assemble_fine, solve_fine, trace_surface)
from .errors import ConfigError, NumericalError
from .gmsfem import (MsBasis, OfflineConfig, assemble_ms_basis, averaged_fields,
                     build_local_bases, build_ms_basis, coarse_observable, dof_table,
                     relative_errors, solve_coarse)
from .mcmc import (ChainConfig, ChainRecord, Observable, fine_forward, misfit_general,
                   misfit_relative, ms_forward, run_single_stage, run_two_stage)
from .mesh import (CoarseMesh, FineMesh, GridSpec, build_coarse_mesh, build_fine_mesh,
                   partition_of_unity, surface_nodes)
from .randfield import (CovarianceSpec, KleModel, MaterialLaw, build_kle, energy_ratio,
                        material_fields, porosity_from_field, realize_field,
                        sample_theta)
from .surrogate import (Dataset, NnModel, NnSpec, SurrogateModel, TrainConfig,
                        build_model, generate_dataset, metrics, ml_forward,
                        predict_observable, train)

__version__ = "0.1.0"

__all__ = [
    "BoundarySpec", "FineSolution", "FineSystem", "PhysicalParams",
    "TimeSteppingConfig", "assemble_fine", "solve_fine", "trace_surface",
    "ConfigError", "NumericalError",
    "MsBasis", "OfflineConfig", "assemble_ms_basis", "averaged_fields",
    "build_local_bases", "build_ms_basis", "coarse_observable", "dof_table",
    "relative_errors", "solve_coarse",
    "ChainConfig", "ChainRecord", "Observable", "fine_forward", "misfit_general",
    "misfit_relative", "ms_forward", "run_single_stage", "run_two_stage",
    "CoarseMesh", "FineMesh", "GridSpec", "build_coarse_mesh", "build_fine_mesh",
    "partition_of_unity", "surface_nodes",
    "CovarianceSpec", "KleModel", "MaterialLaw", "build_kle", "energy_ratio",
    "material_fields", "porosity_from_field", "realize_field", "sample_theta",
    "Dataset", "NnModel", "NnSpec", "SurrogateModel", "TrainConfig",
    "build_model", "generate_dataset", "metrics", "ml_forward",
    "predict_observable", "train",
    "__version__",
]
