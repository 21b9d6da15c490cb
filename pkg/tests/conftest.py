"""Shared instance builders for the test suite.

All randomness is seeded through numpy Generators so every failure is
replayable from the (seed, dims) pair printed in assertion messages.
The sampling distributions mirror the validation campaign defaults:
emissions ~ U[-2, 2], transitions ~ U[-1, 1], duration bias ~ U[-0.5, 0.5].
"""

from __future__ import annotations

import numpy as np
import pytest

from streamcrf.potentials import (
    CenteredEmissions,
    CenteringMode,
    CumulativeScores,
    EmissionBatch,
    SemiCRFParams,
    build_cumulative,
    build_scores,
)


def random_params(rng: np.random.Generator, K: int, C: int, scalar_boundaries: bool = False) -> SemiCRFParams:
    return SemiCRFParams(
        transition=rng.uniform(-1.0, 1.0, size=(C, C)),
        duration_bias=rng.uniform(-0.5, 0.5, size=(K, C)),
        pi_start=rng.uniform(-1.0, 1.0, size=C) if scalar_boundaries else None,
        pi_end=rng.uniform(-1.0, 1.0, size=C) if scalar_boundaries else None,
    )


def random_instance(
    rng: np.random.Generator,
    B: int = 1,
    T: int = 6,
    K: int = 3,
    C: int = 3,
    mode: CenteringMode = CenteringMode.NONE,
    ragged: bool = False,
    projections: bool = False,
    scalar_boundaries: bool = False,
):
    """Returns (batch, params, cum) with cum fully prepared for the solvers."""
    emissions = rng.uniform(-2.0, 2.0, size=(B, T, C))
    if ragged and B > 1 and T > 1:
        lengths = rng.integers(1, T + 1, size=B)
        lengths[rng.integers(0, B)] = T  # keep at least one full-length row
    else:
        lengths = np.full(B, T, dtype=np.int64)
    batch = EmissionBatch(emissions, lengths)
    params = random_params(rng, K, C, scalar_boundaries)
    proj_start = rng.uniform(-0.5, 0.5, size=(B, T, C)) if projections else None
    proj_end = rng.uniform(-0.5, 0.5, size=(B, T, C)) if projections else None
    cum = build_scores(batch, params, mode, proj_start, proj_end)
    return batch, params, cum


def cum_from_centered(centered: np.ndarray, lengths=None) -> CumulativeScores:
    """Build CumulativeScores directly from already-centered emissions."""
    centered = np.asarray(centered, dtype=np.float64)
    if centered.ndim == 2:
        centered = centered[None]
    B, T, C = centered.shape
    if lengths is None:
        lengths = np.full(B, T, dtype=np.int64)
    ce = CenteredEmissions(
        centered=centered,
        lengths=np.asarray(lengths, dtype=np.int64),
        mode=CenteringMode.NONE,
        baseline=np.zeros((B, C)),
    )
    return build_cumulative(ce)


def zero_params(K: int, C: int) -> SemiCRFParams:
    return SemiCRFParams(np.zeros((C, C)), np.zeros((K, C)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
