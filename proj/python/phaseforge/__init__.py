from ._core import (
    Error,
    InvalidArgument,
    ParseError,
    compare_outputs,
    cosine_distance,
    explore,
    extract_features,
    geometric_mean,
    parse_phase_order,
    reduce_order,
    render_phase_order,
    run_cli,
    suggest_knn,
)

__all__ = [
    "Error",
    "InvalidArgument",
    "ParseError",
    "compare_outputs",
    "cosine_distance",
    "explore",
    "extract_features",
    "geometric_mean",
    "parse_phase_order",
    "reduce_order",
    "render_phase_order",
    "run_cli",
    "suggest_knn",
]
