"""Constant-memory semi-Markov inference over cumulative score tables.

The generic backend keeps the forward recurrence alive in a K-slot ring
(position t lives in slot ``t % K``), renormalizes the whole ring every
``delta`` positions, and snapshots the ring at each renormalization so the
backward pass can replay any window of length ``delta`` on demand. Memory for
the messages is therefore O(K*C) per sequence plus O(ceil(T/delta)*K*C) of
checkpoints — with ``delta ~ sqrt(T*K)`` both the checkpoint count and the
replay cost grow like the square root of the sequence length instead of
linearly.

Two specialized paths cover the degenerate duration bounds: ``k1_*`` collapses
the model to a linear-chain CRF and ``k2_forward``/``k2_viterbi`` keep exactly
two live message vectors. Both refuse inputs with per-position boundary
projections — those need the generic ring — and :func:`dispatch` encodes that
routing rule.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from ._numerics import (
    NEG_INF,
    RunStats,
    clamp_log,
    logaddexp_pair,
    logsumexp,
)
from .accounting import MemoryLedger
from .diagnostics import GradientSet, MarginalSet, finalize_marginals
from .potentials import CumulativeScores, Segmentation, SemiCRFParams


class ContractViolation(RuntimeError):
    """An internal routing or sequencing contract was broken by the caller."""


class BackendKind(enum.Enum):
    LinearK1 = "k1"
    NearLinearK2 = "k2"
    Streaming = "streaming"


@dataclass(frozen=True)
class CheckpointSet:
    """Ring snapshots taken at every renormalization boundary.

    ``omega[b, i]`` is the (K, C) ring state at position ``i * delta`` — after
    the shift applied there — and ``N[b, i]`` the normalizer accumulated so
    far. Snapshot 0 is the initial ring (alpha[0] = 0, everything else at the
    sentinel) with a zero normalizer. Restoring ``omega[:, i]`` and replaying
    positions ``i*delta+1 .. min((i+1)*delta, T)`` reproduces the original
    forward messages bit for bit: no shift happens strictly inside a segment.
    """

    omega: np.ndarray  # (B, N_ckpt, K, C)
    N: np.ndarray  # (B, N_ckpt)
    delta: int

    @property
    def n_checkpoints(self) -> int:
        return self.omega.shape[1]


@dataclass
class RingAudit:
    """Index-discipline tracker for ring reads and writes.

    Callers report positions; the audit derives the slot and checks that every
    read finds the position it expects, i.e. that no live value was overwritten
    early. The backward pass writes position t while reading t+1 .. t+K, which
    is exactly why it needs 2K slots — an audit with ``slots=K`` there would
    fill ``violations`` immediately. Assumes a full-length batch: padded rows
    skip writes per sequence but share the global index schedule.
    """

    slots: int
    reads: int = 0
    writes: int = 0
    violations: list[str] = field(default_factory=list)
    _holder: dict[int, int] = field(default_factory=dict)

    def note_write(self, position: int) -> None:
        self._holder[position % self.slots] = position
        self.writes += 1

    def note_read(self, position: int) -> None:
        self.reads += 1
        held = self._holder.get(position % self.slots)
        if held != position:
            self.violations.append(
                f"slot {position % self.slots}: expected position {position}, holds {held}"
            )


def choose_checkpoint_interval(T: int, K: int) -> int:
    """Renormalization/checkpoint spacing: round(sqrt(T*K)), clamped to [1, T].

    This balances the two square-root terms: ceil(T/delta) snapshots of size
    K*C against replay windows of delta positions.
    """
    if T < 1:
        raise ValueError(f"sequence length must be positive, got {T}")
    return max(1, min(T, int(round(sqrt(T * K)))))


def _duration_scores(
    cum: CumulativeScores, params: SemiCRFParams, t: int, ks: np.ndarray
) -> np.ndarray:
    """Segment content + duration bias (+ projections) for segments ending at t.

    Returns (B, len(ks), C); ``ks`` holds the durations, so row ``j`` scores
    the segment [t - ks[j], t).
    """
    h = cum.S[:, t, None, :] - cum.S[:, t - ks, :] + params.duration_bias[None, ks - 1, :]
    if cum.proj_start is not None:
        h = h + cum.proj_start[:, t - ks, :]
    if cum.proj_end is not None:
        h = h + cum.proj_end[:, None, t - 1, :]
    return h


def _message_update(
    ring: np.ndarray,
    t: int,
    cum: CumulativeScores,
    params: SemiCRFParams,
    clamp_stats=None,
    audit: RingAudit | None = None,
) -> np.ndarray:
    """One position of the forward recurrence, reading history from the ring."""
    K = params.max_duration
    kmax = min(K, t)
    ks = np.arange(1, kmax + 1)
    h = clamp_log(_duration_scores(cum, params, t, ks), clamp_stats)
    if audit is not None:
        for k in range(1, kmax + 1):
            audit.note_read(t - k)
    prev = ring[(t - ks) % K]  # (kmax, B, C') — fancy indexing copies
    scores = (
        prev[:, :, :, None]
        + params.transition[None, None, :, :]
        + h.transpose(1, 0, 2)[:, :, None, :]
    )  # (kmax, B, C', C)
    B, C = h.shape[0], h.shape[2]
    flat = scores.transpose(1, 0, 2, 3).reshape(B, kmax * C, C)
    return clamp_log(logsumexp(flat, axis=1), clamp_stats)


def streaming_forward(
    cum: CumulativeScores,
    params: SemiCRFParams,
    delta: int | None = None,
    *,
    ledger: MemoryLedger | None = None,
    stats: RunStats | None = None,
    audit: RingAudit | None = None,
) -> tuple[np.ndarray, CheckpointSet]:
    """Ring-buffer forward pass; returns per-sequence logZ and the snapshots.

    Positions past a sequence's length are held: no write, no shift, so the
    slot holding alpha[L_b] survives untouched and logZ is read there at the
    end. A sequence whose messages all fall below the NEG_INF guard before its
    end has no finite path mass — that raises, naming the first dead position,
    instead of returning a sentinel logZ.
    """
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    K = params.max_duration
    if params.num_labels != C:
        raise ValueError(f"label count mismatch: scores have {C}, params {params.num_labels}")
    if delta is None:
        delta = choose_checkpoint_interval(T, K)
    delta = int(delta)
    if delta < 1:
        raise ValueError(f"checkpoint interval must be >= 1, got {delta}")
    n_ckpt = -(-T // delta)
    lengths = cum.lengths
    clamp_stats = stats.clamp if stats is not None else None

    ring = np.full((K, B, C), NEG_INF)
    ring[0] = 0.0  # the virtual source: every label is a free starting state
    n_accum = np.zeros(B)
    omega = np.empty((B, n_ckpt, K, C))
    n_arr = np.empty((B, n_ckpt))
    omega[:, 0] = ring.transpose(1, 0, 2)
    n_arr[:, 0] = 0.0
    if audit is not None:
        audit.note_write(0)
    first_dead = np.full(B, -1, dtype=np.int64)

    for t in range(1, T + 1):
        new = _message_update(ring, t, cum, params, clamp_stats, audit)
        live = t <= lengths
        dead_now = live & (new.max(axis=1) <= NEG_INF + 1.0) & (first_dead < 0)
        first_dead[dead_now] = t
        slot = t % K
        ring[slot] = np.where(live[:, None], new, ring[slot])
        if audit is not None:
            audit.note_write(t)
        if t % delta == 0:
            shift = new.max(axis=1)
            shift = np.where(live & (shift > NEG_INF + 1.0), shift, 0.0)
            alive = ring > NEG_INF + 1.0  # shifting sentinels would revive them
            ring = np.where(alive, ring - shift[None, :, None], ring)
            n_accum = n_accum + shift
            i = t // delta
            if i < n_ckpt:
                omega[:, i] = ring.transpose(1, 0, 2)
                n_arr[:, i] = n_accum

    rows = np.arange(B)
    final = ring[lengths % K, rows]  # (B, C)
    raw = logsumexp(final, axis=1)
    if np.any(raw <= NEG_INF + 1.0):
        b = int(np.argmax(raw <= NEG_INF + 1.0))
        t_dead = int(first_dead[b]) if first_dead[b] >= 0 else int(lengths[b])
        raise ValueError(
            f"sequence {b}: log-partition diverged to -inf; every duration/source "
            f"candidate fell below the guard first at t={t_dead}"
        )
    if ledger is not None:
        ledger.record("ring", ring)
        ledger.record("checkpoints", omega)
    return raw + n_accum, CheckpointSet(omega=omega, N=n_arr, delta=delta)


def recompute_alpha(
    omega_i: np.ndarray,
    n_i: np.ndarray,
    cum: CumulativeScores,
    params: SemiCRFParams,
    t_start: int,
    t_end: int,
) -> np.ndarray:
    """Replay forward messages for positions t_start..t_end from one snapshot.

    Returns (B, t_end - t_start + 1, C) with ``block[:, 0]`` taken straight
    from the snapshot slot. Values stay in the snapshot's normalized frame
    (``n_i`` is not re-applied; callers add it back when they need absolute
    log-mass). ``t_start == t_end`` is a pure restore with zero replay steps.
    """
    if not 0 <= t_start <= t_end <= cum.max_length:
        raise ValueError(f"bad replay window [{t_start}, {t_end}] for T={cum.max_length}")
    K = params.max_duration
    B, C = omega_i.shape[0], omega_i.shape[2]
    del n_i  # kept in the signature so (omega, N) travel as a pair
    ring = np.ascontiguousarray(omega_i.transpose(1, 0, 2))
    block = np.empty((B, t_end - t_start + 1, C))
    block[:, 0] = ring[t_start % K]
    lengths = cum.lengths
    for t in range(t_start + 1, t_end + 1):
        new = _message_update(ring, t, cum, params)
        slot = t % K
        ring[slot] = np.where((t <= lengths)[:, None], new, ring[slot])
        block[:, t - t_start] = ring[slot]
    return block


def streaming_backward(
    cum: CumulativeScores,
    params: SemiCRFParams,
    logZ: np.ndarray,
    ckpts: CheckpointSet,
    upstream: np.ndarray | None = None,
    *,
    ledger: MemoryLedger | None = None,
    stats: RunStats | None = None,
    audit: RingAudit | None = None,
) -> tuple[GradientSet, MarginalSet]:
    """Checkpointed backward pass: gradients and posterior marginals.

    Walks the checkpoint segments last-to-first, replaying each alpha window
    with :func:`recompute_alpha` while the beta recurrence runs in a 2K-slot
    ring — beta at position t reads positions t+1..t+K, which are still live
    in the wider ring when slot t is rewritten. Beta values are kept raw
    (unnormalized); the replayed alphas carry the segment's checkpoint
    normalizer ``N_i``, so each joint segment marginal is
    ``exp(alpha~ + edge + beta + N_i - logZ)``, clamped to [-80, 80] before
    exponentiation.

    ``upstream`` scales the *gradients* per sequence (think d(loss)/d(logZ));
    the returned marginals are posteriors and ignore it. Gradient sums for the
    transition and duration tables accumulate into a per-(sequence, segment)
    workspace and are reduced segment-major, then batch-major, making repeat
    runs bit-identical.

    The marginal outputs are inherently (B, T, C)-sized; they are deliverables,
    not DP state, and are excluded from the constant-memory accounting.
    """
    if not isinstance(ckpts, CheckpointSet):
        raise ContractViolation(
            "streaming_backward needs the CheckpointSet from streaming_forward; "
            f"got {type(ckpts).__name__}"
        )
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    K = params.max_duration
    delta = ckpts.delta
    n_ckpt = ckpts.n_checkpoints
    if n_ckpt != -(-T // delta):
        raise ContractViolation(
            f"checkpoint set holds {n_ckpt} segments; T={T} with delta={delta} needs {-(-T // delta)}"
        )
    lengths = cum.lengths
    scale = np.ones(B) if upstream is None else np.asarray(upstream, dtype=np.float64)
    if scale.shape != (B,):
        raise ValueError(f"upstream must be shaped ({B},), got {scale.shape}")
    trans = params.transition
    clamp_stats = stats.clamp if stats is not None else None
    logZ = np.asarray(logZ, dtype=np.float64)

    slots = 2 * K
    beta = np.full((slots, B, C), NEG_INF)
    rows = np.arange(B)
    beta[lengths % slots, rows] = 0.0
    if audit is not None:
        audit.note_write(int(lengths.max()))

    workspace = np.zeros((B, n_ckpt, K, C, C))  # mu sums, [k, label, source]
    grad_S = np.zeros((B, T + 1, C))
    has_proj = cum.proj_start is not None
    grad_Ps = np.zeros((B, T, C)) if has_proj else None
    grad_Pe = np.zeros((B, T, C)) if has_proj else None
    coverage_diff = np.zeros((B, T + 1, C))
    boundary = np.zeros((B, T))
    total_mass = np.zeros(B)

    for i in range(n_ckpt - 1, -1, -1):
        t0 = i * delta
        t1 = min((i + 1) * delta, T)
        block = recompute_alpha(ckpts.omega[:, i], ckpts.N[:, i], cum, params, t0, t1)
        norm = ckpts.N[:, i] - logZ  # (B,)
        for t in range(t1 - 1, t0 - 1, -1):
            kmax = min(K, T - t)
            ks = np.arange(1, kmax + 1)
            # segments [t, t+k): content read forward from t this time
            h = cum.S[:, t + ks, :] - cum.S[:, t, None, :] + params.duration_bias[None, :kmax, :]
            if has_proj:
                h = h + cum.proj_start[:, None, t, :] + cum.proj_end[:, t + ks - 1, :]
            h = clamp_log(h, clamp_stats)
            if audit is not None:
                for k in range(1, kmax + 1):
                    audit.note_read(t + k)
            nxt = beta[(t + ks) % slots]  # (kmax, B, C)
            hb = h + nxt.transpose(1, 0, 2)  # (B, kmax, C)
            valid = (t + ks)[None, :] <= lengths[:, None]  # (B, kmax)
            hb = np.where(valid[:, :, None], hb, NEG_INF)

            # beta[t, c'] = LSE over (k, c) of hb + trans[c', c]
            Q = hb[:, :, None, :] + trans[None, None, :, :]  # (B, kmax, C', C)
            new_beta = logsumexp(Q.transpose(0, 2, 1, 3).reshape(B, C, kmax * C), axis=2)

            logmu = (
                hb[:, :, :, None]
                + trans.T[None, None, :, :]
                + block[:, t - t0][:, None, None, :]
                + norm[:, None, None, None]
            )  # (B, kmax, C, C')
            np.clip(logmu, -80.0, 80.0, out=logmu)
            mu = np.exp(logmu)
            mu = np.where(valid[:, :, None, None], mu, 0.0)  # clip floor leaks e^-80 into masked cells
            mu_grad = mu * scale[:, None, None, None]
            workspace[:, i, :kmax] += mu_grad

            seg_post = mu.sum(axis=3)  # (B, kmax, C)
            seg_grad = mu_grad.sum(axis=3)
            grad_S[:, t, :] -= seg_grad.sum(axis=1)
            grad_S[:, t + ks, :] += seg_grad  # distinct ends: fancy += is safe
            if has_proj:
                grad_Ps[:, t, :] += seg_grad.sum(axis=1)
                grad_Pe[:, t + ks - 1, :] += seg_grad
            coverage_diff[:, t, :] += seg_post.sum(axis=1)
            coverage_diff[:, t + ks, :] -= seg_post
            starts = seg_post.sum(axis=(1, 2))
            boundary[:, t] += starts
            total_mass += starts

            write = t < lengths
            beta[t % slots] = np.where(
                write[:, None], clamp_log(new_beta, clamp_stats), beta[t % slots]
            )
            if audit is not None:
                audit.note_write(t)

    grad_T = np.zeros((C, C))
    grad_B = np.zeros((K, C))
    for i in range(n_ckpt):
        for b in range(B):
            w = workspace[b, i]  # (K, C, C')
            grad_T += w.sum(axis=0).T
            grad_B += w.sum(axis=2)

    if ledger is not None:
        ledger.record("backward ring", beta)
        ledger.record("workspace", workspace)
    grads = GradientSet(
        grad_S=grad_S,
        grad_T=grad_T,
        grad_B=grad_B,
        grad_P_start=grad_Ps,
        grad_P_end=grad_Pe,
    )
    marginals = finalize_marginals(coverage_diff, boundary, total_mass, lengths)
    return grads, marginals


def streaming_viterbi(
    cum: CumulativeScores,
    params: SemiCRFParams,
    *,
    ledger: MemoryLedger | None = None,
) -> tuple[list[Segmentation], np.ndarray]:
    """Best segmentation per sequence under the max-semiring ring recurrence.

    Message memory matches the forward pass (K slots, no normalization needed
    without exponentials); only the backpointer table grows with T. Ties pick
    the longest duration, then the smallest source label, then the smallest
    final label.
    """
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    K = params.max_duration
    ring = np.full((K, B, C), NEG_INF)
    ring[0] = 0.0
    back = np.zeros((T + 1, B, C, 2), dtype=np.int64)
    lengths = cum.lengths

    for t in range(1, T + 1):
        kmax = min(K, t)
        ks = np.arange(1, kmax + 1)
        h = _duration_scores(cum, params, t, ks)
        prev = ring[(t - ks) % K]  # (kmax, B, C')
        cand = (
            prev.transpose(1, 0, 2)[:, :, :, None]
            + params.transition[None, None, :, :]
            + h[:, :, None, :]
        )  # (B, kmax, C', C)
        # reversed-duration argmax: first maximum = largest k, then smallest c'
        rev = cand[:, ::-1].reshape(B, kmax * C, C)
        flat = np.argmax(rev, axis=1)  # (B, C)
        best = np.take_along_axis(rev, flat[:, None, :], axis=1)[:, 0, :]
        k_rev, src = np.divmod(flat, C)
        live = t <= lengths
        slot = t % K
        ring[slot] = np.where(live[:, None], best, ring[slot])
        back[t, :, :, 0] = kmax - k_rev
        back[t, :, :, 1] = src

    if ledger is not None:
        ledger.record("backpointers", back)
    segs: list[Segmentation] = []
    scores = np.empty(B)
    for b in range(B):
        L = int(lengths[b])
        final = ring[L % K, b]
        c = int(np.argmax(final))
        scores[b] = final[c]
        out = []
        t = L
        while t > 0:
            k = int(back[t, b, c, 0])
            src = int(back[t, b, c, 1])
            out.append((t - k, t, c))
            c = src
            t -= k
        segs.append(Segmentation(tuple(reversed(out))))
    return segs, scores


# ---------------------------------------------------------------------------
# fast paths


def _require_fast_path(cum: CumulativeScores, params: SemiCRFParams, K: int) -> None:
    if params.max_duration != K:
        raise ContractViolation(
            f"fast path is specialized to max duration {K}, got {params.max_duration}"
        )
    if cum.has_projections:
        raise ContractViolation(
            "fast paths cannot absorb per-position boundary projections; "
            "dispatch() must route such inputs to the streaming backend"
        )


def _k1_scan(
    cum: CumulativeScores,
    params: SemiCRFParams,
    ledger: MemoryLedger | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear-chain forward with full message history. Returns (alpha, e, logZ)."""
    _require_fast_path(cum, params, 1)
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    e = np.diff(cum.S, axis=1) + params.duration_bias[0]  # (B, T, C) step scores
    alpha = np.empty((B, T + 1, C))
    alpha[:, 0] = 0.0
    trans = params.transition
    lengths = cum.lengths
    for t in range(1, T + 1):
        prev = alpha[:, t - 1]
        new = logsumexp(prev[:, :, None] + trans[None, :, :], axis=1) + e[:, t - 1]
        alpha[:, t] = np.where((t <= lengths)[:, None], new, prev)
    rows = np.arange(B)
    logZ = logsumexp(alpha[rows, lengths], axis=1)
    if ledger is not None:
        ledger.record("alpha history", alpha)
    return alpha, e, logZ


def k1_forward(
    cum: CumulativeScores,
    params: SemiCRFParams,
    *,
    ledger: MemoryLedger | None = None,
) -> np.ndarray:
    """log-partition for max duration 1 in O(T*C^2) time, O(T*C) memory."""
    return _k1_scan(cum, params, ledger)[2]


def _k1_posterior(
    cum: CumulativeScores,
    params: SemiCRFParams,
    upstream: np.ndarray | None = None,
    ledger: MemoryLedger | None = None,
) -> tuple[np.ndarray, GradientSet, MarginalSet]:
    """Exact linear-chain backward against the stored alpha history."""
    alpha, e, logZ = _k1_scan(cum, params, ledger)
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    lengths = cum.lengths
    scale = np.ones(B) if upstream is None else np.asarray(upstream, dtype=np.float64)
    trans = params.transition

    grad_S = np.zeros((B, T + 1, C))
    grad_T = np.zeros((C, C))
    grad_B1 = np.zeros(C)
    coverage_diff = np.zeros((B, T + 1, C))
    boundary = np.zeros((B, T))
    total_mass = np.zeros(B)

    beta = np.full((B, C), NEG_INF)
    for t in range(T, 0, -1):
        beta[lengths == t] = 0.0  # seed each sequence's suffix at its end
        core = (
            e[:, t - 1][:, :, None] + trans.T[None, :, :] + beta[:, :, None]
        )  # [b, label c, source c']
        logmu = core + alpha[:, t - 1][:, None, :] - logZ[:, None, None]
        mu = np.exp(np.minimum(logmu, 0.0))
        mu = np.where((t <= lengths)[:, None, None], mu, 0.0)
        mu_grad = mu * scale[:, None, None]

        mass = mu.sum(axis=2)  # (B, C)
        mass_grad = mu_grad.sum(axis=2)
        grad_S[:, t, :] += mass_grad
        grad_S[:, t - 1, :] -= mass_grad
        grad_T += mu_grad.sum(axis=0).T
        grad_B1 += mass_grad.sum(axis=0)
        coverage_diff[:, t - 1, :] += mass
        coverage_diff[:, t, :] -= mass
        started = mass.sum(axis=1)
        boundary[:, t - 1] += started
        total_mass += started

        new_beta = logsumexp(core, axis=1)  # over labels c -> (B, c')
        beta = np.where(((t - 1) < lengths)[:, None], new_beta, beta)

    grads = GradientSet(
        grad_S=grad_S, grad_T=grad_T, grad_B=grad_B1[None, :], grad_P_start=None, grad_P_end=None
    )
    return logZ, grads, finalize_marginals(coverage_diff, boundary, total_mass, lengths)


def k1_viterbi(
    cum: CumulativeScores,
    params: SemiCRFParams,
    *,
    ledger: MemoryLedger | None = None,
) -> tuple[list[Segmentation], np.ndarray]:
    """Classic linear-chain Viterbi; every decoded segment has duration 1."""
    _require_fast_path(cum, params, 1)
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    e = np.diff(cum.S, axis=1) + params.duration_bias[0]
    trans = params.transition
    lengths = cum.lengths
    delta_tbl = np.empty((B, T + 1, C))
    delta_tbl[:, 0] = 0.0
    back = np.zeros((T + 1, B, C), dtype=np.int64)
    for t in range(1, T + 1):
        cand = delta_tbl[:, t - 1][:, :, None] + trans[None, :, :]  # (B, c', c)
        src = np.argmax(cand, axis=1)  # smallest source index on ties
        best = np.take_along_axis(cand, src[:, None, :], axis=1)[:, 0, :] + e[:, t - 1]
        delta_tbl[:, t] = np.where((t <= lengths)[:, None], best, delta_tbl[:, t - 1])
        back[t] = src
    if ledger is not None:
        ledger.record("backpointers", back)
        ledger.record("alpha history", delta_tbl)
    segs: list[Segmentation] = []
    scores = np.empty(B)
    rows = np.arange(B)
    final = delta_tbl[rows, lengths]
    for b in range(B):
        L = int(lengths[b])
        c = int(np.argmax(final[b]))
        scores[b] = final[b, c]
        out = []
        for t in range(L, 0, -1):
            out.append((t - 1, t, c))
            c = int(back[t, b, c])
        segs.append(Segmentation(tuple(reversed(out))))
    return segs, scores


def k2_forward(cum: CumulativeScores, params: SemiCRFParams) -> np.ndarray:
    """log-partition for max duration 2 with exactly two live message vectors."""
    _require_fast_path(cum, params, 2)
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    trans = params.transition
    bias = params.duration_bias
    lengths = cum.lengths
    a1 = np.zeros((B, C))  # alpha at the newest position (t-1 inside the loop)
    a2 = np.full((B, C), NEG_INF)  # alpha one older; empty before t=2
    for t in range(1, T + 1):
        e1 = cum.S[:, t] - cum.S[:, t - 1] + bias[0]
        new = logsumexp(a1[:, :, None] + trans[None, :, :], axis=1) + e1
        if t >= 2:
            e2 = cum.S[:, t] - cum.S[:, t - 2] + bias[1]
            two = logsumexp(a2[:, :, None] + trans[None, :, :], axis=1) + e2
            new = logaddexp_pair(new, two)
        live = (t <= lengths)[:, None]
        a2 = a1  # unconditional shift; held rows go stale but are never read
        a1 = np.where(live, new, a1)
    return logsumexp(a1, axis=1)


def k2_viterbi(
    cum: CumulativeScores, params: SemiCRFParams
) -> tuple[list[Segmentation], np.ndarray]:
    """Max-semiring twin of :func:`k2_forward` with the shared tie-break order."""
    _require_fast_path(cum, params, 2)
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    trans = params.transition
    lengths = cum.lengths
    a1 = np.zeros((B, C))
    a2 = np.full((B, C), NEG_INF)
    back = np.zeros((T + 1, B, C, 2), dtype=np.int64)
    for t in range(1, T + 1):
        kmax = min(2, t)
        ks = np.arange(1, kmax + 1)
        h = _duration_scores(cum, params, t, ks)  # (B, kmax, C)
        prev = np.stack([a1, a2][:kmax])  # (kmax, B, C')
        cand = (
            prev.transpose(1, 0, 2)[:, :, :, None]
            + trans[None, None, :, :]
            + h[:, :, None, :]
        )
        rev = cand[:, ::-1].reshape(B, kmax * C, C)
        flat = np.argmax(rev, axis=1)
        best = np.take_along_axis(rev, flat[:, None, :], axis=1)[:, 0, :]
        k_rev, src = np.divmod(flat, C)
        live = (t <= lengths)[:, None]
        a2 = a1
        a1 = np.where(live, best, a1)
        back[t, :, :, 0] = kmax - k_rev
        back[t, :, :, 1] = src
    segs: list[Segmentation] = []
    scores = np.empty(B)
    for b in range(B):
        L = int(lengths[b])
        # held rows keep their final message parked in a1, so this read is
        # correct even when L < max(lengths)
        c = int(np.argmax(a1[b]))
        scores[b] = a1[b, c]
        out = []
        t = L
        while t > 0:
            k = int(back[t, b, c, 0])
            s = int(back[t, b, c, 1])
            out.append((t - k, t, c))
            c = s
            t -= k
        segs.append(Segmentation(tuple(reversed(out))))
    return segs, scores


# ---------------------------------------------------------------------------
# routing


def dispatch(params: SemiCRFParams, cum: CumulativeScores | None = None) -> BackendKind:
    """Pick the backend for the given duration bound and boundary structure.

    Scalar boundary weights never matter here: they are folded into the score
    table before any backend runs. Full per-position projections disqualify
    the fast paths because those add a (t, k)-dependent term the collapsed
    recurrences cannot represent.
    """
    has_proj = cum is not None and cum.has_projections
    if params.max_duration == 1 and not has_proj:
        return BackendKind.LinearK1
    if params.max_duration == 2 and not has_proj:
        return BackendKind.NearLinearK2
    return BackendKind.Streaming


def forward_logZ(
    cum: CumulativeScores,
    params: SemiCRFParams,
    delta: int | None = None,
    backend: BackendKind | None = None,
    *,
    ledger: MemoryLedger | None = None,
    stats: RunStats | None = None,
) -> np.ndarray:
    """Per-sequence log-partition via the dispatched (or forced) backend."""
    kind = dispatch(params, cum) if backend is None else backend
    if kind is BackendKind.LinearK1:
        return k1_forward(cum, params, ledger=ledger)
    if kind is BackendKind.NearLinearK2:
        return k2_forward(cum, params)
    return streaming_forward(cum, params, delta, ledger=ledger, stats=stats)[0]


def posterior(
    cum: CumulativeScores,
    params: SemiCRFParams,
    delta: int | None = None,
    upstream: np.ndarray | None = None,
    *,
    ledger: MemoryLedger | None = None,
    stats: RunStats | None = None,
) -> tuple[np.ndarray, GradientSet, MarginalSet]:
    """Full differentiable pass: logZ, parameter gradients, posterior marginals.

    Duration bound 1 takes the exact linear-chain route; everything else runs
    the checkpointed streaming pair (including duration bound 2 — its fast
    path covers the forward value only).
    """
    if dispatch(params, cum) is BackendKind.LinearK1:
        return _k1_posterior(cum, params, upstream, ledger=ledger)
    logZ, ckpts = streaming_forward(cum, params, delta, ledger=ledger, stats=stats)
    grads, marginals = streaming_backward(
        cum, params, logZ, ckpts, upstream, ledger=ledger, stats=stats
    )
    return logZ, grads, marginals


def decode(
    cum: CumulativeScores,
    params: SemiCRFParams,
    backend: BackendKind | None = None,
    *,
    ledger: MemoryLedger | None = None,
) -> tuple[list[Segmentation], np.ndarray]:
    """Best segmentations via the dispatched (or forced) backend."""
    kind = dispatch(params, cum) if backend is None else backend
    if kind is BackendKind.LinearK1:
        return k1_viterbi(cum, params, ledger=ledger)
    if kind is BackendKind.NearLinearK2:
        return k2_viterbi(cum, params)
    return streaming_viterbi(cum, params, ledger=ledger)
