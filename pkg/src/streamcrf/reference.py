"""Dense reference backend: exhaustive enumeration, textbook forward-backward,
joint marginals, and Viterbi.

This module trades memory for obviousness — it materializes full (T+1, C)
message tables and the (B, T+1, K, C, C) joint-marginal tensor — and exists to
be the correctness oracle for the streaming backend. A byte-count guard
(default 2 GiB, override via ``STREAMCRF_GUARD_BYTES``) refuses instances
where that trade stops being sane.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, replace

import numpy as np

from ._numerics import NEG_INF, argbest_duration_source, logsumexp
from .accounting import MemoryLedger
from .diagnostics import GradientSet
from .potentials import (
    CumulativeScores,
    Segmentation,
    SemiCRFParams,
    segment_path_score,
)

DEFAULT_GUARD_BYTES = 2 * 1024**3

# Exhaustive enumeration visits every (source, tiling, labeling) triple; past
# these dims the path count explodes combinatorially.
ENUM_MAX_LENGTH = 12
ENUM_MAX_DURATION = 4
ENUM_MAX_LABELS = 4


class GuardExceeded(RuntimeError):
    """An oracle-sized resource guard refused the instance."""


def guard_bytes_limit() -> int:
    return int(os.environ.get("STREAMCRF_GUARD_BYTES", DEFAULT_GUARD_BYTES))


def dense_bytes_needed(B: int, T: int, K: int, C: int) -> int:
    """Footprint of the joint-marginal tensor the dense backward materializes."""
    return B * (T + 1) * K * C * C * 8


def _check_dense_guard(cum: CumulativeScores, params: SemiCRFParams) -> None:
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    need = dense_bytes_needed(B, T, params.max_duration, C)
    limit = guard_bytes_limit()
    if need > limit:
        raise GuardExceeded(
            f"dense backend would materialize {need} bytes "
            f"(B={B}, T={T}, K={params.max_duration}, C={C}), over the "
            f"{limit}-byte guard; instances this size belong on the streaming "
            f"backend, or raise STREAMCRF_GUARD_BYTES if you really want the "
            f"dense tensors"
        )


@dataclass
class DenseMessages:
    """Full forward/backward message tables plus the partition value.

    ``alpha[b, t, c]`` sums path prefixes whose last segment ends at boundary
    t with label c (``alpha[:, 0, :] == 0`` is the virtual-source convention);
    ``beta[b, t, c']`` sums path suffixes from boundary t given previous label
    c' (``beta[b, L_b, :] == 0``). ``beta`` is None until the backward pass
    runs.

    The pointwise product identity ``LSE_c(alpha[t] + beta[t]) == logZ`` holds
    only where *every* path has a segment boundary: t = 0, t = L_b, and all t
    when K == 1. At interior boundaries with K >= 2, paths whose segment
    strictly crosses t carry none of the product mass; the full conservation
    statement adds those crossing segments back in — see
    :func:`flow_conservation_residual`.
    """

    alpha: np.ndarray  # (B, T+1, C)
    beta: np.ndarray | None  # (B, T+1, C)
    logZ: np.ndarray  # (B,)


# ---------------------------------------------------------------------------
# Exhaustive enumeration
# ---------------------------------------------------------------------------


def _tilings(length: int, max_duration: int):
    """Yield every duration tuple tiling [0, length) with parts <= max_duration."""
    if length == 0:
        yield ()
        return
    for k in range(1, min(max_duration, length) + 1):
        for rest in _tilings(length - k, max_duration):
            yield (k,) + rest


def _check_enum_guard(L: int, K: int, C: int) -> None:
    if L > ENUM_MAX_LENGTH or K > ENUM_MAX_DURATION or C > ENUM_MAX_LABELS:
        raise GuardExceeded(
            f"enumeration oracle is limited to L<={ENUM_MAX_LENGTH}, "
            f"K<={ENUM_MAX_DURATION}, C<={ENUM_MAX_LABELS}; "
            f"got L={L}, K={K}, C={C}"
        )


def _all_segmentations(L: int, K: int, C: int):
    for durations in _tilings(L, K):
        bounds = [0]
        for k in durations:
            bounds.append(bounds[-1] + k)
        for labels in itertools.product(range(C), repeat=len(durations)):
            yield Segmentation(
                tuple(
                    (bounds[i], bounds[i + 1], labels[i])
                    for i in range(len(durations))
                )
            )


def enumerate_logZ(cum: CumulativeScores, params: SemiCRFParams, b: int = 0) -> float:
    """Brute-force partition value: logsumexp over every path's score.

    A path is a (virtual source label, tiling, labeling) triple; the
    per-source score vectors are concatenated and reduced in one pass, so the
    result is exact up to float64 summation order.
    """
    L = int(cum.lengths[b])
    _check_enum_guard(L, params.max_duration, params.num_labels)
    chunks = [
        segment_path_score(cum, params, seg, b)
        for seg in _all_segmentations(L, params.max_duration, params.num_labels)
    ]
    return float(logsumexp(np.concatenate(chunks), axis=0))


def enumerate_viterbi_score(
    cum: CumulativeScores, params: SemiCRFParams, b: int = 0
) -> float:
    """Brute-force best path score (max over sources, tilings, labelings)."""
    L = int(cum.lengths[b])
    _check_enum_guard(L, params.max_duration, params.num_labels)
    best = -np.inf
    for seg in _all_segmentations(L, params.max_duration, params.num_labels):
        best = max(best, float(segment_path_score(cum, params, seg, b).max()))
    return best


# ---------------------------------------------------------------------------
# Dense DP
# ---------------------------------------------------------------------------


def _duration_block(
    cum: CumulativeScores, params: SemiCRFParams, t: int, kmax: int
) -> np.ndarray:
    """h[b, k-1, c]: segment content + duration bias + projections for every
    segment ending at boundary t with duration k in 1..kmax."""
    ks = np.arange(1, kmax + 1)
    h = cum.S[:, t, None, :] - cum.S[:, t - ks, :]
    h = h + params.duration_bias[:kmax]
    if cum.proj_start is not None:
        h = h + cum.proj_start[:, t - ks, :]
    if cum.proj_end is not None:
        h = h + cum.proj_end[:, t - 1, None, :]
    return h


def dense_forward(
    cum: CumulativeScores,
    params: SemiCRFParams,
    ledger: MemoryLedger | None = None,
) -> DenseMessages:
    """Textbook semi-CRF forward recursion over full (B, T+1, C) tables."""
    _check_dense_guard(cum, params)
    B, Tp1, C = cum.S.shape
    T = Tp1 - 1
    K = params.max_duration
    trans = params.transition

    alpha = np.full((B, T + 1, C), NEG_INF)
    alpha[:, 0, :] = 0.0
    for t in range(1, T + 1):
        kmax = min(K, t)
        ks = np.arange(1, kmax + 1)
        h = _duration_block(cum, params, t, kmax)  # (B, k, C)
        prev = alpha[:, t - ks, :]  # (B, k, C')
        scores = prev[:, :, :, None] + trans[None, None, :, :] + h[:, :, None, :]
        new = logsumexp(scores.reshape(B, kmax * C, C), axis=1)
        live = t <= cum.lengths
        alpha[live, t, :] = new[live]

    rows = np.arange(B)
    logZ = logsumexp(alpha[rows, cum.lengths, :], axis=1)
    if ledger is not None:
        ledger.record("alpha history", alpha)
    return DenseMessages(alpha=alpha, beta=None, logZ=logZ)


def dense_backward_marginals(
    cum: CumulativeScores,
    params: SemiCRFParams,
    msgs: DenseMessages,
    ledger: MemoryLedger | None = None,
) -> tuple[np.ndarray, GradientSet]:
    """Backward messages, joint marginals mu[b, t, k-1, c, c'], gradients.

    Fills ``msgs.beta`` in place. t indexes segment ends; invalid cells
    (k > t, t > L_b, or t == 0) stay exactly zero. The gradient assembly
    mirrors the marginal measure: every segment adds +mu at its end row of
    grad_S and -mu at its start row, so grad_S telescopes to zero per
    sequence.
    """
    _check_dense_guard(cum, params)
    S = cum.S
    B, Tp1, C = S.shape
    T = Tp1 - 1
    K = params.max_duration
    trans = params.transition
    bias = params.duration_bias

    beta = np.full((B, T + 1, C), NEG_INF)
    rows = np.arange(B)
    beta[rows, cum.lengths, :] = 0.0
    mu = np.zeros((B, T + 1, K, C, C))
    if ledger is not None:
        ledger.record("edge tensor", mu)

    for b in range(B):
        L = int(cum.lengths[b])
        for t in range(L - 1, -1, -1):
            kmax = min(K, L - t)
            ks = np.arange(1, kmax + 1)
            # segments [t, t+k) of every duration, plus what follows them
            h = S[b, t + ks, :] - S[b, t, None, :] + bias[:kmax]
            if cum.proj_start is not None:
                h = h + cum.proj_start[b, t, None, :]
            if cum.proj_end is not None:
                h = h + cum.proj_end[b, t + ks - 1, :]
            nxt = beta[b, t + ks, :]  # (k, C)
            hb = h + nxt
            # beta[t, c'] = LSE_{k, c} (h + beta_next)[k, c] + trans[c', c]
            Q = hb[:, None, :] + trans[None, :, :]
            beta[b, t, :] = logsumexp(Q.transpose(1, 0, 2).reshape(C, kmax * C), axis=1)
            # joint marginals of the same segments: end-indexed at e = t + k
            logmu = (
                hb[:, :, None]
                + trans.T[None, :, :]
                + msgs.alpha[b, t][None, None, :]
                - msgs.logZ[b]
            )
            mu[b, t + ks, ks - 1] = np.exp(np.minimum(logmu, 0.0))

    np.clip(mu, 0.0, 1.0, out=mu)  # one-ulp rounding guard; exact values <= 1
    msgs.beta = beta

    seg_mass = mu.sum(axis=4)  # (B, T+1, K, C)
    grad_T = mu.sum(axis=(0, 1, 2)).T
    grad_B = seg_mass.sum(axis=(0, 1))
    grad_S = np.zeros((B, T + 1, C))
    grad_S += seg_mass.sum(axis=2)  # +mass at segment ends
    grad_Ps = np.zeros((B, T, C)) if cum.proj_start is not None else None
    grad_Pe = np.zeros((B, T, C)) if cum.proj_end is not None else None
    for k in range(1, min(K, T) + 1):
        ends = seg_mass[:, k:, k - 1, :]
        grad_S[:, : T + 1 - k, :] -= ends  # -mass at segment starts
        if grad_Ps is not None:
            grad_Ps[:, : T + 1 - k, :] += ends
        if grad_Pe is not None:
            grad_Pe[:, k - 1 : T, :] += ends
    grads = GradientSet(
        grad_S=grad_S,
        grad_T=grad_T,
        grad_B=grad_B,
        grad_P_start=grad_Ps,
        grad_P_end=grad_Pe,
    )
    return mu, grads


def flow_conservation_residual(
    msgs: DenseMessages, cum: CumulativeScores, params: SemiCRFParams
) -> np.ndarray:
    """Max deviation, per sequence, of the conservation identity at every cut.

    At each boundary t, total path mass splits into paths with a segment
    boundary exactly at t (the alpha·beta product) plus paths whose segment
    strictly crosses t (alpha at the segment start, the edge potential, beta
    at the segment end). Their logsumexp must reproduce logZ at every t; the
    returned vector holds the worst |deviation| over t for each sequence.
    """
    if msgs.beta is None:
        raise ValueError("beta missing: run dense_backward_marginals first")
    S = cum.S
    K = params.max_duration
    trans = params.transition
    bias = params.duration_bias
    out = np.zeros(cum.batch_size)
    for b in range(cum.batch_size):
        L = int(cum.lengths[b])
        worst = 0.0
        for t in range(L + 1):
            terms = [msgs.alpha[b, t] + msgs.beta[b, t]]
            for s in range(max(0, t - K + 1), t):
                for e in range(t + 1, min(L, s + K) + 1):
                    k = e - s
                    h = S[b, e] - S[b, s] + bias[k - 1]
                    if cum.proj_start is not None:
                        h = h + cum.proj_start[b, s]
                    if cum.proj_end is not None:
                        h = h + cum.proj_end[b, e - 1]
                    mass = (
                        h[:, None]
                        + trans.T
                        + msgs.alpha[b, s][None, :]
                        + msgs.beta[b, e][:, None]
                    )
                    terms.append(mass.ravel())
            cut = logsumexp(np.concatenate(terms), axis=0)
            worst = max(worst, abs(float(cut) - float(msgs.logZ[b])))
        out[b] = worst
    return out


def dense_viterbi(
    cum: CumulativeScores,
    params: SemiCRFParams,
    b: int = 0,
    ledger: MemoryLedger | None = None,
) -> tuple[Segmentation, float]:
    """Max-semiring analogue of dense_forward with full backpointer tables."""
    _check_dense_guard(cum, params)
    L = int(cum.lengths[b])
    C = params.num_labels
    K = params.max_duration
    trans = params.transition

    delta = np.full((L + 1, C), NEG_INF)
    delta[0, :] = 0.0
    back = np.zeros((L + 1, C, 2), dtype=np.int64)
    if ledger is not None:
        ledger.record("backpointers", back)
    for t in range(1, L + 1):
        kmax = min(K, t)
        ks = np.arange(1, kmax + 1)
        h = _duration_block(cum, params, t, kmax)[b]  # (k, C)
        prev = delta[t - ks]  # (k, C')
        cand = prev[:, :, None] + trans[None, :, :] + h[:, None, :]
        for c in range(C):
            ki, cp = argbest_duration_source(cand[:, :, c])
            delta[t, c] = cand[ki, cp, c]
            back[t, c] = (ki + 1, cp)

    c = int(np.argmax(delta[L]))
    score = float(delta[L, c])
    segments = []
    t = L
    while t > 0:
        k, cp = (int(v) for v in back[t, c])
        segments.append((t - k, t, c))
        t -= k
        c = cp
    return Segmentation(tuple(reversed(segments))), score
