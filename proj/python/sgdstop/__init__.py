"""Python access to the sgdstop SGD diagnostics library."""

from ._sgdstop import (
    ConfigError,
    __version__,
    classify,
    compute_c1_c2,
    compute_c_nu_bar,
    count_upcrossings,
    counterexample_second_moment,
    ladder,
    parse_config,
    run,
    run_experiment,
    step_sizes,
)

__all__ = [
    "ConfigError",
    "__version__",
    "classify",
    "compute_c1_c2",
    "compute_c_nu_bar",
    "count_upcrossings",
    "counterexample_second_moment",
    "ladder",
    "parse_config",
    "run",
    "run_experiment",
    "step_sizes",
]
