"""Cantor sets with flat discrete equilibrium potential and their verification."""

from .calibrate import (
    CalibrationTrace,
    DeltaDiagnostics,
    budget,
    choose_parameters,
    delta_diagnostics,
    delta_table,
    run_construction,
    width,
)
from .core import (
    GeneratorSpec,
    Level,
    LineBinary,
    ParamTree,
    RingAxis,
    RootsOfUnity,
    Word,
    expand_level,
    root_level,
)
from .estimator import CantorEquilibriumSet
from .exceptions import (
    BudgetError,
    CantorError,
    DegenerateGeometryError,
    DomainError,
    InfeasibleError,
    NumericError,
    ResourceLimitError,
    SingularityError,
    UsageError,
)
from .feasibility import FeasibilityReport, bound_delta2, bound_delta3, feasible, search_max_delta
from .kernels import KernelSpec, ring_kernel, sibling_increment
from .potential import PotentialProfile, hier_potential_profile, potential_at, potential_profile
from .verify import (
    GreenEstimate,
    WosResult,
    ahlfors_report,
    green_at,
    green_ratio_sweep,
    measure_comparison,
    wos_sample,
)

__version__ = "0.1.0"
