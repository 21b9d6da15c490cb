"""Seeded synthetic sequences with controlled label imbalance.

The generator writes a gold segmentation first (quota-tracked labels,
geometric durations) and then paints emissions around it: uniform noise
everywhere, plus a gain on the gold channel. When one label dominates, the
gain on that label is bimodal *per run* — most runs are strongly marked, a
minority are barely above the noise floor. Those weak runs are the lever the
centering ablation measures: subtracting the per-label mean taxes the
dominant label hardest, so a decoder that was happy to keep a weak run under
no centering hands it to a rare label once means are removed. Because the
modulation is per run rather than per position, the handover is wholesale —
segment counts move between labels instead of runs shattering into noise.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .accounting import MemoryLedger
from .potentials import (
    CSV_HEADER,
    CenteringMode,
    EmissionBatch,
    Segmentation,
    SemiCRFParams,
    build_scores,
    center_emissions,
)
from .streaming import decode

__all__ = [
    "generate_imbalanced",
    "centering_ablation",
    "ablation_report_csv",
    "IMBALANCE_GATE",
]

GEOMETRIC_P = 0.05  # mean duration 20 before truncation
NOISE_HALF_WIDTH = 0.5
IMBALANCE_GATE = 1.5  # max/min share ratio at which bimodal modulation kicks in
WEAK_SHARE = 0.25  # fraction of dominant-label runs drawn weakly marked
WEAK_RANGE = (0.25, 0.4)
STRONG_RANGE = (0.75, 1.25)
PLAIN_RANGE = (0.9, 1.1)
# A weak run also resembles one specific other label: that channel gets a
# faint echo of the gain. Small enough that the true label still wins when
# emissions are taken as-is, large enough to decide where the run lands once
# mean subtraction has taxed the dominant label below the echo.
CONFUSION_SHARE = 0.15

ABLATION_GAIN = 2.0
SWITCH_PENALTY = 1.5  # decode-side transition cost; vetoes single-position flips
# Without a per-segment cost every chunking of a same-label run ties exactly,
# and cumsum rounding breaks the tie arbitrarily; a small constant cost makes
# the minimal chunking strictly best while leaving label choices untouched.
SEGMENT_COST = 0.05
PENALTY_DURATIONS = (10, 25, 50)


def _check_proportions(C: int, proportions: Sequence[float]) -> np.ndarray:
    p = np.asarray(proportions, dtype=np.float64)
    if p.shape != (C,):
        raise ValueError(f"proportions must have length C={C}, got shape {p.shape}")
    if (p <= 0).any():
        raise ValueError("every label share must be positive")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"label shares must sum to 1, got {p.sum()!r}")
    return p


def generate_imbalanced(
    T: int,
    C: int,
    proportions: Sequence[float],
    active_gain: float,
    seed: int | Sequence[int],
    *,
    max_duration: int = 50,
) -> tuple[EmissionBatch, Segmentation]:
    """One sequence of length T whose gold labels track the given shares.

    Labels are sampled proportional to each label's remaining mass quota
    (with a mild damping of immediate repeats so runs stay plentiful);
    durations are geometric with mean 20, truncated to [1, max_duration] and
    the remaining length. Emissions are uniform noise in [-0.5, 0.5] plus
    ``active_gain * factor`` on the gold channel, where factor is near 1
    except for the dominant label of a clearly imbalanced share vector,
    whose runs are drawn weak (factor 0.25-0.4) with probability 0.25 and
    strong (0.75-1.25) otherwise.
    """
    if T < 1 or C < 1 or max_duration < 1:
        raise ValueError(f"T, C, max_duration must be positive, got ({T}, {C}, {max_duration})")
    p = _check_proportions(C, proportions)
    rng = np.random.default_rng(seed)

    dominant = int(np.argmax(p))
    modulate = C > 1 and float(p.max()) >= IMBALANCE_GATE * float(p.min())

    segments: list[tuple[int, int, int]] = []
    factors: list[float] = []
    echo_labels: list[int] = []  # -1 when the segment carries no echo
    mass = np.zeros(C)
    pos = 0
    prev = -1
    run_is_weak = False
    run_echo = -1
    while pos < T:
        weights = np.clip(p * T - mass, 0.0, None)
        if weights.sum() <= 0.0:
            weights = p.copy()
        if C > 1 and prev >= 0:
            damped = weights.copy()
            damped[prev] *= 0.5
            if damped.sum() > 0.0:
                weights = damped
        label = int(rng.choice(C, p=weights / weights.sum()))
        if label != prev:
            run_is_weak = modulate and label == dominant and rng.random() < WEAK_SHARE
            run_echo = -1
            if run_is_weak:
                others = [c for c in range(C) if c != dominant]
                run_echo = int(rng.choice(others))
        if modulate and label == dominant:
            lo, hi = WEAK_RANGE if run_is_weak else STRONG_RANGE
        else:
            lo, hi = PLAIN_RANGE
        factors.append(float(rng.uniform(lo, hi)))
        echo_labels.append(run_echo if label == dominant else -1)
        dur = min(int(rng.geometric(GEOMETRIC_P)), max_duration, T - pos)
        segments.append((pos, pos + dur, label))
        mass[label] += dur
        pos += dur
        prev = label

    emissions = rng.uniform(-NOISE_HALF_WIDTH, NOISE_HALF_WIDTH, size=(T, C))
    for (s, e, c), factor, echo in zip(segments, factors, echo_labels):
        emissions[s:e, c] += active_gain * factor
        if echo >= 0:
            emissions[s:e, echo] += active_gain * CONFUSION_SHARE
    batch = EmissionBatch(emissions[None, :, :], np.array([T]))
    return batch, Segmentation(tuple(segments))


def centering_ablation(
    T: int,
    C: int,
    proportions: Sequence[float],
    modes: Sequence[CenteringMode],
    seed: int,
) -> dict:
    """Decode one generated sequence under each centering mode and count.

    The decoder is deliberately minimal — a flat label-switch penalty plus a
    flat per-segment cost — so the only thing that differs between modes is
    what centering did to the emissions. The report carries per-label decoded
    segment counts per mode, the per-label masked means, and the duration tax
    those means imply for segments of 10/25/50 positions.
    """
    batch, gold = generate_imbalanced(T, C, proportions, ABLATION_GAIN, seed)
    K = min(50, T)
    params = SemiCRFParams(
        transition=SWITCH_PENALTY * (np.eye(C) - 1.0),
        duration_bias=np.full((K, C), -SEGMENT_COST),
    )
    nu = center_emissions(batch, CenteringMode.MEAN).baseline[0]

    gold_counts = [0] * C
    for _, _, c in gold:
        gold_counts[c] += 1

    per_mode: dict[str, list[int]] = {}
    for mode in modes:
        cum = build_scores(batch, params, mode)
        paths, _ = decode(cum, params, ledger=MemoryLedger())
        counts = [0] * C
        for _, _, c in paths[0]:
            counts[c] += 1
        per_mode[mode.value] = counts

    return {
        "T": T,
        "C": C,
        "proportions": [float(v) for v in proportions],
        "seed": seed,
        "nu": [float(v) for v in nu],
        "duration_penalty": {k: [float(-v * k) for v in nu] for k in PENALTY_DURATIONS},
        "gold_counts": gold_counts,
        "modes": per_mode,
    }


def ablation_report_csv(report: dict) -> str:
    """Flat CSV: one row per (mode, label), penalties denormalized onto each row."""
    lines = [CSV_HEADER, "mode,label,decoded_segments,nu,pen_k10,pen_k25,pen_k50"]
    pen = report["duration_penalty"]
    for mode, counts in report["modes"].items():
        for c, n in enumerate(counts):
            cells = [mode, str(c), str(n), repr(report["nu"][c])]
            cells += [repr(pen[k][c]) for k in PENALTY_DURATIONS]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
