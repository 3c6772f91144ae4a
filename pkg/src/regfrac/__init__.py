"""Regional and full fractional Laplacians on graded meshes, semilinear solves and boundary blow-up."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DivergenceError, DomainError, FitError, InvariantBreachError,
                     NonconvergenceError, OracleError, RegfracError, ShapeError, SingularityError,
                     UnsupportedError)
from .geometry import Ball, FractionalOrder, GradedMesh, Interval, build_mesh, phi, phi_nodes
from .operator import OperatorMatrix, apply, assemble, full_oracle, validate_against_oracle
from .solver import (GreenMatrix, LimitReport, Nonlinearity, SolutionField, SolverConfig, SourceField,
                     blowup_limit, green_matrix, minimality_check, solve_linear_dirichlet,
                     solve_semilinear)
from .barriers import (Barrier, build_barrier, certify_barrier_bound, certify_super_solution,
                       ko_classify)
from .analysis import (RateFit, fit_power_law, fit_rate, green_bound_check, nonexistence_diagnostics,
                       sandwich_verdict)
from .config import ScenarioConfig, dump_config, load_config
