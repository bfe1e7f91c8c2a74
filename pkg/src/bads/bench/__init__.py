from .baselines import baseline_nelder_mead, baseline_random_search, nelder_mead
from .functions import GROUPS, SUITE, TestFunction, function_suite, make_function, rosenbrock
from .harness import (
    BenchConfig,
    BenchmarkReport,
    Cell,
    aggregate,
    aggregate_report,
    bads_with_restarts,
    eps_grid,
    export_report,
    load_report,
    run_benchmark,
    run_cell,
)
from .noise import NoiseWrapper, as_objective, noisy_eval
