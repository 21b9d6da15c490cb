"""Posterior diagnostics: position marginals, boundary posterior and entropy,
the self-consistency invariant suite, and the training objective (NLL).

Everything here consumes the outputs of a backward pass — either the dense
joint-marginal tensor or the streaming accumulators — and is deliberately
backend-agnostic: the same report runs on both, which is what makes the
invariants useful as a cross-check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .potentials import CumulativeScores, Segmentation, SemiCRFParams, score_segmentation


@dataclass(frozen=True)
class GradientSet:
    """Gradients of (a weighted sum of) logZ with respect to every input array.

    grad_S is indexed like the cumulative scores themselves — boundary row t
    collects +mass from segments ending at t and -mass from segments starting
    at t, so each segment contributes a zero-sum pair and the whole array sums
    to zero per sequence. The projection gradients are present only when the
    instance carried projections.
    """

    grad_S: np.ndarray  # (B, T+1, C)
    grad_T: np.ndarray  # (C, C), indexed [c_prev, c_new]
    grad_B: np.ndarray  # (K, C)
    grad_P_start: np.ndarray | None = None  # (B, T, C)
    grad_P_end: np.ndarray | None = None  # (B, T, C)


@dataclass(frozen=True)
class MarginalSet:
    """Per-position posteriors derived from the joint segment marginals.

    position_marginals[b, t, c] is the probability that position t is covered
    by a segment labeled c; boundary_posterior[b, t] the probability that a
    segment *starts* at t (position 0 always carries probability 1).
    Padded positions are exactly zero in both arrays.
    """

    position_marginals: np.ndarray  # (B, T, C)
    boundary_posterior: np.ndarray  # (B, T)
    expected_segment_count: np.ndarray  # (B,)
    lengths: np.ndarray  # (B,)


def finalize_marginals(
    coverage_diff: np.ndarray,
    boundary: np.ndarray,
    total_mass: np.ndarray,
    lengths: np.ndarray,
) -> MarginalSet:
    """Turn difference-array accumulators into a MarginalSet.

    ``coverage_diff[b, s, c] += m`` / ``coverage_diff[b, e, c] -= m`` per
    segment [s, e) is the O(1)-per-segment way to spread mass over covered
    positions; a single cumulative sum recovers the per-position totals. The
    reconstruction leaves ~1e-17 cancellation dust past each sequence end, and
    padding is *defined* to be zero, so the padded region is masked exactly.
    """
    B, Tp1, C = coverage_diff.shape
    T = Tp1 - 1
    pos = np.cumsum(coverage_diff, axis=1)[:, :T, :]
    valid = np.arange(T)[None, :] < lengths[:, None]
    pos = np.where(valid[:, :, None], np.clip(pos, 0.0, 1.0), 0.0)
    boundary = np.where(valid, np.clip(boundary, 0.0, 1.0), 0.0)
    return MarginalSet(
        position_marginals=pos,
        boundary_posterior=boundary,
        expected_segment_count=np.asarray(total_mass, dtype=np.float64),
        lengths=np.asarray(lengths),
    )


def position_marginals(mu: np.ndarray, lengths: np.ndarray) -> MarginalSet:
    """MarginalSet from a dense joint-marginal tensor mu[b, t, k-1, c, c'].

    t indexes segment *ends*; each marginal is spread over the k positions the
    segment covers, and its start position t-k receives the boundary mass.
    """
    B, Tp1, K, C, _ = mu.shape
    T = Tp1 - 1
    seg_mass = mu.sum(axis=4)  # (B, T+1, K, C)
    coverage_diff = np.zeros((B, T + 1, C))
    boundary = np.zeros((B, T))
    for k in range(1, min(K, T) + 1):
        ends = seg_mass[:, k:, k - 1, :]  # segments of duration k end at t >= k
        coverage_diff[:, : T + 1 - k, :] += ends
        coverage_diff[:, k:, :] -= seg_mass[:, k:, k - 1, :]
        boundary[:, : T + 1 - k] += ends.sum(axis=2)
    total = mu.sum(axis=(1, 2, 3, 4))
    return finalize_marginals(coverage_diff, boundary, total, lengths)


def boundary_entropy(
    boundary_posterior: np.ndarray, lengths: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Shannon entropy (nats) of the normalized boundary posterior per sequence.

    Returns ``(H, exp(H))`` — the second being the effective number of
    distinct boundary positions. Rejects sequences whose boundary vector holds
    no mass at all (the distribution would be undefined).
    """
    boundary_posterior = np.asarray(boundary_posterior, dtype=np.float64)
    B = boundary_posterior.shape[0]
    H = np.zeros(B)
    for b in range(B):
        p = boundary_posterior[b, : int(lengths[b])]
        mass = p.sum()
        if mass <= 0.0:
            raise ValueError(f"sequence {b}: boundary posterior carries no mass")
        p = p / mass
        nz = p[p > 0.0]
        H[b] = float(-(nz * np.log(nz)).sum())
    return H, np.exp(H)


def self_consistency_report(
    marginals: MarginalSet,
    normalization_tol: float = 1e-6,
    mass_tol: float = 1e-4,
) -> dict:
    """Evaluate the posterior invariants and return a JSON-ready report.

    Checks, per sequence and in aggregate:
      range          every entry in [0, 1]
      normalization  sum_c P(c|t) == 1 at valid positions
      mass           sum_{t,c} P(c|t) == L_b within ``mass_tol`` (relative)
      padding        everything past L_b exactly zero
      segment_count  expected segment count in [1, L_b]

    Failures are report entries, never exceptions — the caller decides what
    a red invariant means.
    """
    P = marginals.position_marginals
    bp = marginals.boundary_posterior
    lengths = marginals.lengths
    B, T, _ = P.shape
    valid = np.arange(T)[None, :] < lengths[:, None]

    range_dev = max(
        float(np.maximum(-P, 0.0).max(initial=0.0)),
        float(np.maximum(P - 1.0, 0.0).max(initial=0.0)),
        float(np.maximum(-bp, 0.0).max(initial=0.0)),
        float(np.maximum(bp - 1.0, 0.0).max(initial=0.0)),
    )
    norm_dev = float(np.abs(np.where(valid, P.sum(axis=2) - 1.0, 0.0)).max())
    mass = P.sum(axis=(1, 2))
    mass_dev = float(np.abs(mass / lengths - 1.0).max())
    pad_dev = float(np.abs(np.where(valid[:, :, None], 0.0, P)).max())
    pad_dev = max(pad_dev, float(np.abs(np.where(valid, 0.0, bp)).max()))
    count = marginals.expected_segment_count
    count_dev = float(
        np.maximum(1.0 - count, np.maximum(count - lengths, 0.0)).max(initial=0.0)
    )

    entries = [
        {"invariant": "range", "tolerance": 0.0, "max_deviation": range_dev},
        {"invariant": "normalization", "tolerance": normalization_tol, "max_deviation": norm_dev},
        {"invariant": "mass_conservation", "tolerance": mass_tol, "max_deviation": mass_dev},
        {"invariant": "padding_zero", "tolerance": 0.0, "max_deviation": pad_dev},
        {"invariant": "segment_count_range", "tolerance": 1e-9, "max_deviation": count_dev},
    ]
    for entry in entries:
        entry["pass"] = bool(entry["max_deviation"] <= entry["tolerance"])
    return {
        "invariants": entries,
        "all_pass": all(e["pass"] for e in entries),
        "boundary_posterior_min": float(np.where(valid, bp, 1.0).min()),
        "boundary_posterior_max": float(np.where(valid, bp, 0.0).max()),
        "expected_segment_count": [float(v) for v in count],
        "note": (
            "boundary range is reported over the segment-start posterior at "
            "valid positions; which marginal a 'boundary marginal range' "
            "refers to is otherwise ambiguous"
        ),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=1)


def nll(
    cum: CumulativeScores, params: SemiCRFParams, gold: Segmentation, b: int = 0
) -> float:
    """Negative log-likelihood of a gold segmentation: logZ - score(gold).

    Non-negative up to float rounding, since the gold path's (source-summed)
    score is one term of the partition sum.
    """
    gold.validate(int(cum.lengths[b]), params.max_duration, params.num_labels)
    from .streaming import forward_logZ  # deferred: avoids a module cycle

    logZ = forward_logZ(cum, params)
    return float(logZ[b] - score_segmentation(cum, params, gold, b))
