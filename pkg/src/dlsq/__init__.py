"""dlsq: server/agent distributed least squares with an iteratively
refined preconditioner, reference first-order baselines, noise models,
and the matching error-bound calculators."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .analysis import (
    BoundInputs,
    ProcessBoundAccumulator,
    bound_inputs_from,
    estimation_error,
    gd_observation_asymptote,
    gd_process_asymptote,
    observation_asymptote,
    observation_bound_curve,
    observation_step_bound,
    process_asymptote,
    process_error_bound,
    process_factor_limit,
    process_gates,
    process_step_factor,
    richardson_rate,
)
from .datasets import (
    Dataset,
    DatasetInfo,
    MatrixMarketError,
    RankDeficiencyError,
    REGISTRY,
    Shard,
    Spectrum,
    compute_spectrum,
    load_dataset,
    make_shards,
    parse_matrix_market,
    partition_rows,
    reassemble,
    resolve_data_dir,
    synthesize_problem,
)
from .network import RoundOutcome, execute_round
from .noise import (
    NoProcessNoise,
    ObservationNoise,
    RoundoffProcessNoise,
    UniformProcessNoise,
    apply_observation_noise,
    estimate_noise_level,
    realized_l1,
    roundoff,
    stream_generator,
    uniform_abs_mean,
)
from .runner import (
    MonteCarloResult,
    RunConfig,
    RunTrace,
    TraceRow,
    emit,
    load_grid_config,
    parse_trace,
    rep_seed,
    resolve_params,
    run,
    run_grid,
    run_monte_carlo,
)
from .solvers import METHODS, make_solver, run_rounds

__all__ = [
    "BACKEND",
    "BoundInputs",
    "Dataset",
    "DatasetInfo",
    "METHODS",
    "MatrixMarketError",
    "MonteCarloResult",
    "NoProcessNoise",
    "ObservationNoise",
    "ProcessBoundAccumulator",
    "REGISTRY",
    "RankDeficiencyError",
    "RoundOutcome",
    "RoundoffProcessNoise",
    "RunConfig",
    "RunTrace",
    "Shard",
    "Spectrum",
    "TraceRow",
    "UniformProcessNoise",
    "apply_observation_noise",
    "bound_inputs_from",
    "compute_spectrum",
    "emit",
    "estimate_noise_level",
    "estimation_error",
    "execute_round",
    "gd_observation_asymptote",
    "gd_process_asymptote",
    "load_dataset",
    "load_grid_config",
    "make_shards",
    "make_solver",
    "observation_asymptote",
    "observation_bound_curve",
    "observation_step_bound",
    "parse_matrix_market",
    "parse_trace",
    "partition_rows",
    "process_asymptote",
    "process_error_bound",
    "process_factor_limit",
    "process_gates",
    "process_step_factor",
    "realized_l1",
    "reassemble",
    "rep_seed",
    "resolve_data_dir",
    "resolve_params",
    "richardson_rate",
    "roundoff",
    "run",
    "run_grid",
    "run_monte_carlo",
    "run_rounds",
    "stream_generator",
    "synthesize_problem",
    "uniform_abs_mean",
    "__version__",
]
