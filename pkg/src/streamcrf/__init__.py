"""Streaming semi-Markov CRF inference in constant working memory.

Exact logZ, marginals, gradients, and Viterbi decoding for segment-structured
CRFs with bounded segment duration, in three flavours: a dense reference
backend, a constant-memory streaming backend with checkpointed
re-computation, and closed-form fast paths for duration bounds of 1 and 2.

The usual entry points are :func:`build_scores` to turn emissions and
parameters into cumulative boundary scores, then :func:`forward_logZ`,
:func:`posterior`, and :func:`decode`, which dispatch to the right backend.
Everything else lives in the submodules: ``reference`` (dense oracle),
``streaming`` (constant-memory pair), ``diagnostics`` (posterior invariants),
``validation`` (gradient checks, equivalence campaigns, the training demo),
``banded`` (duration-compatibility bandwidth analysis), ``datagen``
(synthetic skewed corpora and the centering ablation), and ``cli``.
"""

from .accounting import MemoryLedger
from .diagnostics import (
    GradientSet,
    MarginalSet,
    boundary_entropy,
    nll,
    self_consistency_report,
)
from .potentials import (
    CenteredEmissions,
    CenteringMode,
    CumulativeScores,
    EmissionBatch,
    Segmentation,
    SemiCRFParams,
    build_scores,
    center_emissions,
    score_segmentation,
)
from .reference import (
    GuardExceeded,
    dense_backward_marginals,
    dense_forward,
    dense_viterbi,
    enumerate_logZ,
)
from .streaming import (
    BackendKind,
    CheckpointSet,
    ContractViolation,
    RunStats,
    decode,
    dispatch,
    forward_logZ,
    posterior,
    streaming_viterbi,
)
from .validation import (
    backend_equivalence,
    finite_diff_gradcheck,
    training_convergence_demo,
)

__version__ = "0.1.0"

__all__ = [
    "BackendKind",
    "CenteredEmissions",
    "CenteringMode",
    "CheckpointSet",
    "ContractViolation",
    "CumulativeScores",
    "EmissionBatch",
    "GradientSet",
    "GuardExceeded",
    "MarginalSet",
    "MemoryLedger",
    "RunStats",
    "Segmentation",
    "SemiCRFParams",
    "backend_equivalence",
    "boundary_entropy",
    "build_scores",
    "center_emissions",
    "decode",
    "dense_backward_marginals",
    "dense_forward",
    "dense_viterbi",
    "dispatch",
    "enumerate_logZ",
    "finite_diff_gradcheck",
    "forward_logZ",
    "nll",
    "posterior",
    "score_segmentation",
    "self_consistency_report",
    "streaming_viterbi",
    "training_convergence_demo",
    "__version__",
]
