"""Harmonic level-set geometry and curvature inequality checks on metric cubes.

The package solves the mixed Dirichlet/Neumann harmonic problem on
[0,1]^3 with a user-supplied Riemannian metric, extracts level surfaces of
the solution, and verifies integral curvature inequalities together with
rigidity diagnostics.  Exact Green-function oracles on half and quarter
balls provide independent cross-checks.
"""

from .expressions import Expression, ExpressionError
from .grid import Grid, load_fields, save_fields
from .inequality import (FlowEscapeError, InequalityReport,
                         RigidityDiagnostics, TorusBoundInput, TorusBounds,
                         VerificationResult, bochner_residual,
                         compute_inequality_terms, rigidity_diagnostics,
                         torus_bounds, verify_inequality)
from .levelset import (DegenerateLoopError, LevelSurface, NearCriticalError,
                       TopologyError, boundary_geometry, coarea_scan,
                       critical_values, extract_level_set,
                       gauss_bonnet_check, level_family,
                       second_fundamental_form, surface_geometry,
                       surface_topology, write_off)
from .metrics import (DegenerateMetricError, MetricField, christoffel,
                      dihedral_angle, face_geometry, inverse_metric,
                      scalar_curvature, validate_right_angled_metric)
from .oracles import (ModelProblem, OracleDataError, OracleDomainError,
                      OracleValue, QuadratureRule, green_function,
                      kelvin_extend, solve_half_ball, solve_quarter_ball)
from .solver import (HarmonicSolution, SolverConfig, SolverError,
                     continuation_solve, manufactured_solution_error,
                     max_principle_check, solve_mixed_bvp)

__all__ = [
    "Expression",
    "ExpressionError",
    "Grid",
    "load_fields",
    "save_fields",
    "MetricField",
    "DegenerateMetricError",
    "christoffel",
    "dihedral_angle",
    "face_geometry",
    "inverse_metric",
    "scalar_curvature",
    "validate_right_angled_metric",
    "HarmonicSolution",
    "SolverConfig",
    "SolverError",
    "continuation_solve",
    "manufactured_solution_error",
    "max_principle_check",
    "solve_mixed_bvp",
    "LevelSurface",
    "TopologyError",
    "DegenerateLoopError",
    "NearCriticalError",
    "boundary_geometry",
    "coarea_scan",
    "critical_values",
    "extract_level_set",
    "gauss_bonnet_check",
    "level_family",
    "second_fundamental_form",
    "surface_geometry",
    "surface_topology",
    "write_off",
    "InequalityReport",
    "VerificationResult",
    "RigidityDiagnostics",
    "FlowEscapeError",
    "TorusBoundInput",
    "TorusBounds",
    "bochner_residual",
    "compute_inequality_terms",
    "rigidity_diagnostics",
    "torus_bounds",
    "verify_inequality",
    "ModelProblem",
    "OracleValue",
    "OracleDomainError",
    "OracleDataError",
    "QuadratureRule",
    "green_function",
    "kelvin_extend",
    "solve_half_ball",
    "solve_quarter_ball",
]

__version__ = "0.1.0"
