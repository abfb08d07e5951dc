from .baselines import SCHEME_LABELS, SCHEMES, SchemeError, run_alternating, run_scheme
from .beamforming import BeamformingResult, solve_fixed_surface
from .conic import (
    ConicModelError,
    ConicProblem,
    ConicSolution,
    SolverOptions,
    embed_hermitian,
    gsproc_lmi,
    solve,
    sproc_lmi,
)
from .energy import (
    EnergyModelError,
    IrsPowerBudget,
    harvested_power,
    max_sustainable_reflectors,
    required_input_power,
    sustainability_ok,
)
from .harness import (
    CSV_COLUMNS,
    AggregateError,
    Experiment,
    ExperimentError,
    aggregate,
    parse_sweep,
    run_experiment,
    run_selftest,
    trial_row,
)
from .optimizer import OptimizerError, RunRecord, finalize, initialize, run
from .perf_metrics import (
    AuditReport,
    DesignSolution,
    MetricsError,
    audit,
    eve_capacity,
    secrecy_rate,
    sinr_user,
)
from .sca_builder import BuilderError, IterationState, ProblemOptions, build_subproblem, extract_state
from .storage import (
    load_solution,
    read_trial_csv,
    save_solution,
    write_summary_xlsx,
    write_trace_csv,
    write_trial_csv,
)
from .sysconfig import ConfigError, SystemConfig, load_config, make_instance

__all__ = [
    "CSV_COLUMNS",
    "SCHEMES",
    "SCHEME_LABELS",
    "AggregateError",
    "AuditReport",
    "BeamformingResult",
    "BuilderError",
    "ConfigError",
    "ConicModelError",
    "ConicProblem",
    "ConicSolution",
    "DesignSolution",
    "EnergyModelError",
    "Experiment",
    "ExperimentError",
    "IrsPowerBudget",
    "IterationState",
    "MetricsError",
    "OptimizerError",
    "ProblemOptions",
    "RunRecord",
    "SchemeError",
    "SolverOptions",
    "SystemConfig",
    "aggregate",
    "audit",
    "build_subproblem",
    "embed_hermitian",
    "eve_capacity",
    "extract_state",
    "finalize",
    "gsproc_lmi",
    "harvested_power",
    "initialize",
    "load_config",
    "load_solution",
    "make_instance",
    "max_sustainable_reflectors",
    "parse_sweep",
    "read_trial_csv",
    "required_input_power",
    "run",
    "run_alternating",
    "run_experiment",
    "run_scheme",
    "run_selftest",
    "save_solution",
    "secrecy_rate",
    "sinr_user",
    "solve",
    "sproc_lmi",
    "sustainability_ok",
    "trial_row",
    "write_summary_xlsx",
    "write_trace_csv",
    "write_trial_csv",
]
