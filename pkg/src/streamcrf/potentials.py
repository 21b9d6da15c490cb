"""Segment potentials: centering, cumulative scores, boundary folding, scoring.

The whole model is additive in log space. A segment ``[s, s+k)`` with label
``c`` following label ``c'`` scores

    (S[s+k, c] - S[s, c]) + B[k, c] + T[c', c] + P_start[s, c] + P_end[s+k-1, c]

where ``S`` is the cumulative (prefix-sum) array of per-position emission
scores, optionally centered per sequence; ``B`` is a duration bias table;
``T`` a label-transition matrix; and the ``P`` terms optional per-position
boundary scores. Because ``S`` is a prefix sum, every segment content lookup
is O(1) regardless of duration.

Positions ``t in {0..T}`` index *boundaries* between tokens; ``S[b, 0, :] = 0``
and ``S`` is frozen at ``S[b, L_b, :]`` past the true length, so padding is
never read by any downstream recursion.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, replace

import numpy as np

from ._numerics import NEG_INF, logsumexp

CSV_HEADER = "# streamcrf-csv v1"


class CenteringMode(enum.Enum):
    """How per-position emission scores are shifted before prefix summation.

    NONE        leave emissions untouched.
    MEAN        subtract the per-sequence, per-label mean over valid positions.
                Not path-invariant: it induces an effective duration term
                ``-nu[c] * k`` per segment (labels with a high average score
                pay for long segments; labels with a low or negative average
                get a bonus).
    SHARED_MAX  subtract the per-position max over labels, shared by all
                labels. Path-invariant: every segmentation covers each
                position exactly once, so score *differences* between
                segmentations are unchanged.

    Both centerings bound the growth of the prefix sums; MEAN turns an O(T)
    drift into an O(sqrt(T)) random walk.
    """

    NONE = "none"
    MEAN = "mean"
    SHARED_MAX = "shared_max"


# ---------------------------------------------------------------------------
# Core containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmissionBatch:
    """Raw per-position emission scores, (B, T, C), with true lengths (B,).

    Entries at ``t >= lengths[b]`` are padding and may hold anything
    (including NaN); no operation reads them.
    """

    emissions: np.ndarray
    lengths: np.ndarray

    def __post_init__(self) -> None:
        emissions = np.asarray(self.emissions, dtype=np.float64)
        lengths = np.asarray(self.lengths, dtype=np.int64)
        if emissions.ndim != 3:
            raise ValueError(f"emissions must be (B, T, C), got shape {emissions.shape}")
        if lengths.shape != (emissions.shape[0],):
            raise ValueError("lengths must be a vector of batch size")
        if (lengths < 1).any() or (lengths > emissions.shape[1]).any():
            raise ValueError("every length must satisfy 1 <= L_b <= T")
        object.__setattr__(self, "emissions", emissions)
        object.__setattr__(self, "lengths", lengths)

    @property
    def batch_size(self) -> int:
        return self.emissions.shape[0]

    @property
    def max_length(self) -> int:
        return self.emissions.shape[1]

    @property
    def num_labels(self) -> int:
        return self.emissions.shape[2]

    @classmethod
    def from_single(cls, emissions: np.ndarray) -> "EmissionBatch":
        emissions = np.asarray(emissions, dtype=np.float64)
        return cls(emissions[None, :, :], np.array([emissions.shape[0]]))

    def valid_mask(self) -> np.ndarray:
        """(B, T) boolean mask of real (non-padding) positions."""
        t = np.arange(self.max_length)
        return t[None, :] < self.lengths[:, None]


@dataclass(frozen=True)
class CenteredEmissions:
    """Emissions after centering; padding zeroed; baseline retained for MEAN."""

    centered: np.ndarray  # (B, T, C), padding rows exactly 0
    lengths: np.ndarray
    mode: CenteringMode
    baseline: np.ndarray  # (B, C); zeros unless mode is MEAN


@dataclass(frozen=True)
class CumulativeScores:
    """Prefix sums of centered emissions plus everything the DP needs.

    S[b, 0, :] == 0, S[b, t, :] = sum of centered emissions over positions
    < t, frozen at S[b, L_b, :] for t > L_b. Optional boundary projections
    ride along so that solvers receive a single object. ``scalars_folded``
    records that scalar sequence boundaries have been absorbed (into S, or
    into the projections when those are present).
    """

    S: np.ndarray  # (B, T+1, C)
    lengths: np.ndarray  # (B,)
    mode: CenteringMode
    baseline: np.ndarray  # (B, C)
    proj_start: np.ndarray | None = None  # (B, T, C)
    proj_end: np.ndarray | None = None  # (B, T, C)
    scalars_folded: bool = False

    @property
    def batch_size(self) -> int:
        return self.S.shape[0]

    @property
    def max_length(self) -> int:
        return self.S.shape[1] - 1

    @property
    def num_labels(self) -> int:
        return self.S.shape[2]

    @property
    def has_projections(self) -> bool:
        return self.proj_start is not None or self.proj_end is not None


@dataclass(frozen=True)
class SemiCRFParams:
    """Model parameters: transition (C, C), duration bias (K, C), optional
    scalar sequence-boundary vectors (C,).

    ``transition[c_prev, c_new]`` is the log-score of following a segment
    labeled ``c_prev`` with one labeled ``c_new``. ``duration_bias[k-1, c]``
    is the log-score of a segment of duration k with label c.
    """

    transition: np.ndarray
    duration_bias: np.ndarray
    pi_start: np.ndarray | None = None
    pi_end: np.ndarray | None = None

    def __post_init__(self) -> None:
        transition = np.asarray(self.transition, dtype=np.float64)
        duration_bias = np.asarray(self.duration_bias, dtype=np.float64)
        if transition.ndim != 2 or transition.shape[0] != transition.shape[1]:
            raise ValueError("transition must be square (C, C)")
        if duration_bias.ndim != 2 or duration_bias.shape[1] != transition.shape[0]:
            raise ValueError("duration_bias must be (K, C) with matching C")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "duration_bias", duration_bias)
        for name in ("pi_start", "pi_end"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != (transition.shape[0],):
                    raise ValueError(f"{name} must have shape (C,)")
                object.__setattr__(self, name, v)

    @property
    def num_labels(self) -> int:
        return self.transition.shape[0]

    @property
    def max_duration(self) -> int:
        return self.duration_bias.shape[0]

    @property
    def has_scalar_boundaries(self) -> bool:
        return self.pi_start is not None or self.pi_end is not None

    def to_json_dict(self) -> dict:
        doc = {
            "C": self.num_labels,
            "K": self.max_duration,
            "transition": self.transition.tolist(),
            "duration_bias": self.duration_bias.tolist(),
        }
        if self.pi_start is not None:
            doc["pi_start"] = self.pi_start.tolist()
        if self.pi_end is not None:
            doc["pi_end"] = self.pi_end.tolist()
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SemiCRFParams":
        params = cls(
            transition=np.array(doc["transition"], dtype=np.float64),
            duration_bias=np.array(doc["duration_bias"], dtype=np.float64),
            pi_start=np.array(doc["pi_start"], dtype=np.float64) if "pi_start" in doc else None,
            pi_end=np.array(doc["pi_end"], dtype=np.float64) if "pi_end" in doc else None,
        )
        if params.num_labels != doc["C"] or params.max_duration != doc["K"]:
            raise ValueError("declared C/K do not match array shapes")
        return params


@dataclass(frozen=True)
class Segmentation:
    """A labeled tiling of [0, L): ordered half-open segments (start, end, label)."""

    segments: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "segments",
            tuple((int(s), int(e), int(c)) for s, e, c in self.segments),
        )

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def validate(self, length: int, max_duration: int, num_labels: int) -> None:
        """Raise ValueError naming the first violated tiling constraint."""
        if not self.segments:
            raise ValueError("segmentation is empty")
        if self.segments[0][0] != 0:
            raise ValueError(f"first segment starts at {self.segments[0][0]}, expected 0")
        prev_end = 0
        for i, (s, e, c) in enumerate(self.segments):
            if s != prev_end:
                raise ValueError(f"segment {i} starts at {s}, expected {prev_end}")
            k = e - s
            if k < 1:
                raise ValueError(f"segment {i} has non-positive duration {k}")
            if k > max_duration:
                raise ValueError(f"segment {i} duration {k} exceeds K={max_duration}")
            if not (0 <= c < num_labels):
                raise ValueError(f"segment {i} label {c} out of range [0, {num_labels})")
            prev_end = e
        if prev_end != length:
            raise ValueError(f"segmentation ends at {prev_end}, expected length {length}")

    def labels(self) -> list[int]:
        return [c for _, _, c in self.segments]

    def durations(self) -> list[int]:
        return [e - s for s, e, _ in self.segments]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def center_emissions(batch: EmissionBatch, mode: CenteringMode) -> CenteredEmissions:
    """Apply the requested centering; zero out padding; keep the baseline.

    MEAN computes ``nu[b, c]`` as the mean of emissions over valid positions
    only (a masked mean — padding never enters the statistics) and subtracts
    it everywhere. SHARED_MAX subtracts the per-position max over labels.
    Non-finite emissions at valid positions are rejected with a diagnostic
    naming the offending (b, t, c).
    """
    mask = batch.valid_mask()  # (B, T)
    emissions = batch.emissions
    bad = ~np.isfinite(emissions) & mask[:, :, None]
    if bad.any():
        b, t, c = (int(v) for v in np.argwhere(bad)[0])
        raise ValueError(
            f"non-finite emission at valid position: b={b}, t={t}, c={c} "
            f"(value {emissions[b, t, c]!r})"
        )

    B, T, C = emissions.shape
    baseline = np.zeros((B, C))
    if mode is CenteringMode.MEAN:
        masked = np.where(mask[:, :, None], emissions, 0.0)
        baseline = masked.sum(axis=1) / batch.lengths[:, None]
        centered = emissions - baseline[:, None, :]
    elif mode is CenteringMode.SHARED_MAX:
        safe = np.where(mask[:, :, None], emissions, NEG_INF)
        shift = safe.max(axis=2)  # (B, T)
        centered = emissions - shift[:, :, None]
    elif mode is CenteringMode.NONE:
        centered = emissions.copy()
    else:  # pragma: no cover - exhaustive enum
        raise ValueError(f"unknown centering mode {mode!r}")

    centered = np.where(mask[:, :, None], centered, 0.0)
    return CenteredEmissions(centered=centered, lengths=batch.lengths, mode=mode, baseline=baseline)


def build_cumulative(
    centered: CenteredEmissions,
    proj_start: np.ndarray | None = None,
    proj_end: np.ndarray | None = None,
) -> CumulativeScores:
    """Prefix-sum the centered emissions into boundary-indexed scores.

    Because padding rows are exactly zero, the running sum freezes itself at
    S[b, L_b, :] for t > L_b — no masking needed downstream.
    """
    B, T, C = centered.centered.shape
    S = np.zeros((B, T + 1, C))
    np.cumsum(centered.centered, axis=1, out=S[:, 1:, :])
    for name, proj in (("proj_start", proj_start), ("proj_end", proj_end)):
        if proj is not None and np.asarray(proj).shape != (B, T, C):
            raise ValueError(f"{name} must have shape (B, T, C)")
    return CumulativeScores(
        S=S,
        lengths=centered.lengths,
        mode=centered.mode,
        baseline=centered.baseline,
        proj_start=None if proj_start is None else np.asarray(proj_start, dtype=np.float64),
        proj_end=None if proj_end is None else np.asarray(proj_end, dtype=np.float64),
    )


def fold_scalar_boundaries(
    cum: CumulativeScores,
    pi_start: np.ndarray | None,
    pi_end: np.ndarray | None,
) -> CumulativeScores:
    """Absorb scalar sequence-boundary scores into the score arrays.

    Without projections the fold is the prefix-sum trick: decrementing
    S[b, 0, c] by pi_start[c] makes every segment that starts at 0 pick up
    +pi_start[c] through its content difference, and incrementing
    S[b, L_b, c] by pi_end[c] rewards segments ending at L_b; interior
    segments touch neither entry. With full projections present, the scalars
    are added into the projection rows at position 0 / L_b - 1 instead, and
    S stays untouched (the projections already force the generic solver, so
    nothing is gained by rewriting S).

    Returns a new CumulativeScores; the input is not modified.
    """
    if pi_start is None and pi_end is None:
        return replace(cum, scalars_folded=True)
    B = cum.batch_size
    rows = np.arange(B)
    if cum.has_projections:
        T = cum.max_length
        C = cum.num_labels
        ps = np.array(cum.proj_start) if cum.proj_start is not None else np.zeros((B, T, C))
        pe = np.array(cum.proj_end) if cum.proj_end is not None else np.zeros((B, T, C))
        if pi_start is not None:
            ps[:, 0, :] += np.asarray(pi_start)
        if pi_end is not None:
            pe[rows, cum.lengths - 1, :] += np.asarray(pi_end)
        return replace(cum, proj_start=ps, proj_end=pe, scalars_folded=True)
    S = cum.S.copy()
    if pi_start is not None:
        S[:, 0, :] -= np.asarray(pi_start)
    if pi_end is not None:
        S[rows, cum.lengths, :] += np.asarray(pi_end)
    return replace(cum, S=S, scalars_folded=True)


def build_scores(
    batch: EmissionBatch,
    params: SemiCRFParams,
    mode: CenteringMode = CenteringMode.NONE,
    proj_start: np.ndarray | None = None,
    proj_end: np.ndarray | None = None,
) -> CumulativeScores:
    """center -> prefix-sum -> fold scalar boundaries, in one call."""
    cum = build_cumulative(center_emissions(batch, mode), proj_start, proj_end)
    return fold_scalar_boundaries(cum, params.pi_start, params.pi_end)


def edge_potential(
    cum: CumulativeScores,
    params: SemiCRFParams,
    b: int,
    t: int,
    k: int,
    c: int,
    c_prev: int,
) -> float:
    """Score of a single edge: segment [t-k, t) labeled c, following c_prev.

    O(1) in the duration k thanks to the prefix sums. Projection terms are
    zero when the projections are absent.
    """
    L = int(cum.lengths[b])
    if not (1 <= k <= min(params.max_duration, t)):
        raise ValueError(f"duration k={k} out of range [1, min(K, t)] at t={t}")
    if t > L:
        raise ValueError(f"segment end t={t} beyond sequence length {L}")
    value = cum.S[b, t, c] - cum.S[b, t - k, c]
    value += params.duration_bias[k - 1, c]
    value += params.transition[c_prev, c]
    if cum.proj_start is not None:
        value += cum.proj_start[b, t - k, c]
    if cum.proj_end is not None:
        value += cum.proj_end[b, t - 1, c]
    return float(value)


def segment_path_score(
    cum: CumulativeScores, params: SemiCRFParams, seg: Segmentation, b: int
) -> np.ndarray:
    """Per-source-label path scores of a segmentation, before the source
    reduction: entry c0 scores the path assuming the virtual source label c0.

    Internal building block for score_segmentation and the oracles.
    """
    scores = np.zeros(params.num_labels)
    first_label = seg.segments[0][2]
    scores += params.transition[:, first_label]
    prev_c = first_label
    total = 0.0
    for i, (s, e, c) in enumerate(seg.segments):
        k = e - s
        total += cum.S[b, e, c] - cum.S[b, s, c]
        total += params.duration_bias[k - 1, c]
        if i > 0:
            total += params.transition[prev_c, c]
        if cum.proj_start is not None:
            total += cum.proj_start[b, s, c]
        if cum.proj_end is not None:
            total += cum.proj_end[b, e - 1, c]
        prev_c = c
    return scores + total


def score_segmentation(
    cum: CumulativeScores, params: SemiCRFParams, seg: Segmentation, b: int = 0
) -> float:
    """Log-score of one labeled segmentation under the partition's measure.

    The first segment's incoming transition is summed (logsumexp) over all C
    possible virtual source labels — the same convention the forward
    recursion uses by initializing its boundary-0 message to zeros. (Viterbi
    instead maxes over the source; see the decoders.)
    """
    seg.validate(int(cum.lengths[b]), params.max_duration, params.num_labels)
    per_source = segment_path_score(cum, params, seg, b)
    return float(logsumexp(per_source, axis=0))


# ---------------------------------------------------------------------------
# Serialization: params JSON, emissions CSV/JSON, segmentation JSON
# ---------------------------------------------------------------------------


def save_params_json(params: SemiCRFParams, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_json_dict(), fh, indent=1)


def load_params_json(path: str) -> SemiCRFParams:
    with open(path) as fh:
        return SemiCRFParams.from_json_dict(json.load(fh))


def save_emissions_csv(batch: EmissionBatch, path: str) -> None:
    """One row per valid position: b, t, e0..e{C-1}; versioned header comment."""
    C = batch.num_labels
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["b", "t"] + [f"e{c}" for c in range(C)])
        for b in range(batch.batch_size):
            for t in range(int(batch.lengths[b])):
                writer.writerow(
                    [b, t] + [repr(float(v)) for v in batch.emissions[b, t]]
                )


def load_emissions_csv(path: str) -> EmissionBatch:
    rows: dict[int, dict[int, list[float]]] = {}
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["b", "t"]:
            raise ValueError("emissions CSV must start with columns b,t")
        for row in reader:
            if not row:
                continue
            b, t = int(row[0]), int(row[1])
            rows.setdefault(b, {})[t] = [float(v) for v in row[2:]]
    B = max(rows) + 1
    lengths = np.array([max(rows[b]) + 1 for b in range(B)], dtype=np.int64)
    T = int(lengths.max())
    C = len(next(iter(rows[0].values())))
    emissions = np.zeros((B, T, C))
    for b, per_t in rows.items():
        for t, vals in per_t.items():
            emissions[b, t] = vals
    return EmissionBatch(emissions, lengths)


def save_emissions_json(batch: EmissionBatch, path: str) -> None:
    doc = {
        "lengths": batch.lengths.tolist(),
        "emissions": [
            batch.emissions[b, : int(batch.lengths[b])].tolist()
            for b in range(batch.batch_size)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_emissions_json(path: str) -> EmissionBatch:
    with open(path) as fh:
        doc = json.load(fh)
    lengths = np.array(doc["lengths"], dtype=np.int64)
    B = len(lengths)
    T = int(lengths.max())
    seqs = doc["emissions"]
    C = len(seqs[0][0])
    emissions = np.zeros((B, T, C))
    for b in range(B):
        emissions[b, : lengths[b]] = seqs[b]
    return EmissionBatch(emissions, lengths)


def segmentations_to_json(segs: list[Segmentation]) -> list:
    return [
        [{"start": s, "end": e, "label": c} for s, e, c in seg.segments] for seg in segs
    ]


def segmentations_from_json(doc: list) -> list[Segmentation]:
    return [
        Segmentation(tuple((d["start"], d["end"], d["label"]) for d in seg)) for seg in doc
    ]
