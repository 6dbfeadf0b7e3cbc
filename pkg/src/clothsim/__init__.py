"""Penetration-free projective-dynamics cloth simulation."""

from .mesh import ClothMesh, MeshError, SimState, build_mesh, inertia_target, load_obj, save_obj
from .constraints import (
    ElasticConstraints,
    GlobalSystem,
    assemble_global,
    assemble_rhs,
    bend_coefficients,
    build_elastic,
    project_bend,
    project_collision,
    project_stretch,
)
from .subspace import (
    EigensolverError,
    ReducedSystem,
    Subspace,
    build_reduced,
    build_subspace,
    reduced_correction,
    reduced_update,
    spectrum,
    subspace_solve_free,
    subspace_solve_reuse,
    warmstart_correction,
)
from .smoothing import SmootherDivergence, ajacobi_smooth, jacobi_step
from .stepper import PenetrationError, Simulation, StepConfig, StepReport
from .config import ConfigError, SceneConfig, load_config, parse_config, save_config, serialize_config
from .scenes import box_mesh, build_scene, grid_cloth, icosphere, strip_cloth
from .oracles import oracle_ccd, oracle_intersect, spectrum_report, tri_tri_intersect, tri_tri_intersect_exact

__version__ = "0.1.0"
