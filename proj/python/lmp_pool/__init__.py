"""Loss max-pooling: pool per-pixel losses into an upper bound of their mean."""

import json

from ._lmp import (
    InvalidInput,
    InvalidParameter,
    PoolingParameters,
    SolveOutcome,
    TrainingDiverged,
    class_probabilities,
    derive_parameters,
    dual_objective,
    eta,
    pooled_logit_gradient,
    softmax_xent,
    solve_pool,
)
from ._lmp import train as _train

__all__ = [
    "InvalidInput",
    "InvalidParameter",
    "PoolingParameters",
    "SolveOutcome",
    "TrainingDiverged",
    "class_probabilities",
    "derive_parameters",
    "dual_objective",
    "eta",
    "pooled_logit_gradient",
    "softmax_xent",
    "solve_pool",
    "train",
]


def train(spec=None, config=None):
    """Train on a synthetic dataset. `spec` and `config` use the JSON keys of
    docs/formats.md; missing keys take their defaults. Returns the report dict."""
    return json.loads(_train(json.dumps(spec or {}), json.dumps(config or {})))
