"""Adaptive Trotterization for time-dependent spin chains.

The step size of a midpoint-rule Trotter evolution is adapted by measuring
piecewise conserved window Hamiltonians, built from a truncated Magnus
series, and bounding the per-step and accumulated changes of their first
two moments.
"""

from .controller import (
    GlobalAccumulator,
    ScalingStudy,
    StepPolicy,
    ToleranceSet,
    constraints_ok,
    evaluate_candidate,
    fit_loglog_slope,
    run_adaptive,
    run_exact,
    run_fixed,
    scaling_study,
    select_step,
)
from .engine import (
    StateVector,
    apply_trotter_step,
    exact_evolve,
    exact_evolve_dense,
    exact_propagator_dense,
    expectation,
    load_state,
    magnetization,
    measure_moments,
    prepare_initial,
    save_state,
    second_moment,
)
from .errors import (
    BranchCutError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    FreezeHalt,
    TadaError,
)
from .hamiltonian import (
    DriveSchedule,
    HamiltonianSpec,
    LegendreBasis,
    build_A,
    build_static_operators,
    legendre_moment,
)
from .magnus import (
    PiecewiseCache,
    PiecewiseHamiltonian,
    build_piecewise_hamiltonian,
    dense_h_infinity,
    magnus_terms,
    truncation_error_norm,
)
from .pauli import PauliOperator, PauliTerm, commutator, term_multiply
from .trace import StepRecord, TraceLog, read_trace_csv

__version__ = "0.1.0"

__all__ = [
    "BranchCutError",
    "ConfigError",
    "ConvergenceError",
    "DimensionError",
    "DriveSchedule",
    "FreezeHalt",
    "GlobalAccumulator",
    "HamiltonianSpec",
    "LegendreBasis",
    "PauliOperator",
    "PauliTerm",
    "PiecewiseCache",
    "PiecewiseHamiltonian",
    "ScalingStudy",
    "StateVector",
    "StepPolicy",
    "StepRecord",
    "TadaError",
    "ToleranceSet",
    "TraceLog",
    "apply_trotter_step",
    "build_A",
    "build_piecewise_hamiltonian",
    "build_static_operators",
    "commutator",
    "constraints_ok",
    "dense_h_infinity",
    "evaluate_candidate",
    "exact_evolve",
    "exact_evolve_dense",
    "exact_propagator_dense",
    "expectation",
    "fit_loglog_slope",
    "legendre_moment",
    "load_state",
    "magnetization",
    "magnus_terms",
    "measure_moments",
    "prepare_initial",
    "read_trace_csv",
    "run_adaptive",
    "run_exact",
    "run_fixed",
    "save_state",
    "scaling_study",
    "second_moment",
    "select_step",
    "term_multiply",
    "truncation_error_norm",
]
