"""Log-domain numeric primitives shared by every backend.

All dynamic programming in this package runs in float64 log space. Instead of
IEEE ``-inf`` we use a large negative sentinel (:data:`NEG_INF`): arithmetic on
the sentinel stays finite (no ``inf - inf = nan`` surprises inside vectorized
updates), and reductions detect "every input was masked" by comparing the
running max against ``NEG_INF + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Log-domain "minus infinity" sentinel. Anything at or below NEG_INF + 1 is
# treated as an impossible configuration.
NEG_INF = -1.0e9

# Hard range for finite log-domain intermediates. Values pushed outside this
# range by pathological inputs are clipped (and counted); the sentinel itself
# passes through untouched.
CLAMP_LIMIT = 1.0e6


@dataclass
class ClampStats:
    """Counts how often the intermediate clamp actually fired.

    On well-scaled inputs the counter stays at zero; a nonzero count is a
    signal that the caller's potentials are drifting to magnitudes where
    float64 log-space arithmetic starts losing digits.
    """

    events: int = 0

    def add(self, n: int) -> None:
        self.events += int(n)


def clamp_log(values: np.ndarray, stats: ClampStats | None = None) -> np.ndarray:
    """Clip finite log-domain values to [-CLAMP_LIMIT, CLAMP_LIMIT].

    Sentinel entries (<= NEG_INF + 1) are preserved exactly so that masking
    survives the clamp. If ``stats`` is given, the number of genuinely clipped
    entries is accumulated.
    """
    values = np.asarray(values, dtype=np.float64)
    is_masked = values <= NEG_INF + 1.0
    out_of_range = ~is_masked & (np.abs(values) > CLAMP_LIMIT)
    if stats is not None and out_of_range.any():
        stats.add(int(out_of_range.sum()))
    if not out_of_range.any():
        return values
    clipped = np.clip(values, -CLAMP_LIMIT, CLAMP_LIMIT)
    return np.where(is_masked, values, clipped)


def logsumexp(a: np.ndarray, axis: int | tuple[int, ...], keepdims: bool = False) -> np.ndarray:
    """Guarded log-sum-exp along ``axis`` using max subtraction.

    Slices whose maximum sits at or below the sentinel threshold reduce to
    NEG_INF exactly (never NaN), which is what lets downstream code keep
    treating the result as an ordinary masked value.
    """
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    alive = m > NEG_INF + 1.0
    m_safe = np.where(alive, m, 0.0)
    with np.errstate(under="ignore"):
        s = np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)
    out = np.where(alive, m_safe + np.log(np.maximum(s, 1e-300)), NEG_INF)
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out


def argbest_duration_source(scores: np.ndarray) -> tuple[int, int]:
    """Deterministic argmax over a (durations, sources) score block.

    ``scores[k-1, c']`` is laid out with duration ascending along axis 0.
    Ties resolve to the *largest* duration, then the *smallest* source label —
    every decoder in the package routes its backpointer choice through this
    one function so that tie handling can never drift between backends.
    """
    rev = scores[::-1, :]
    flat = int(np.argmax(rev))
    ki, ci = divmod(flat, scores.shape[1])
    return scores.shape[0] - 1 - ki, ci


def logaddexp_pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise guarded log(exp(a) + exp(b))."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = np.maximum(a, b)
    alive = m > NEG_INF + 1.0
    m_safe = np.where(alive, m, 0.0)
    with np.errstate(under="ignore"):
        s = np.exp(a - m_safe) + np.exp(b - m_safe)
    return np.where(alive, m_safe + np.log(s), NEG_INF)


@dataclass
class RunStats:
    """Per-call instrumentation bundle threaded through the DP loops."""

    clamp: ClampStats = field(default_factory=ClampStats)

    @property
    def clamp_events(self) -> int:
        return self.clamp.events
