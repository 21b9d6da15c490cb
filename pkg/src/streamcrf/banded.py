"""Bandwidth geometry of the segment DP's dependency structure.

Two families of boolean matrices describe how far apart interacting unknowns
can sit. ``step_adjacency`` connects sequence boundaries one segment apart;
its m-th boolean power connects boundaries reachable in exactly m segments,
whose support is the band m <= j - i <= m*K — so the bandwidth grows linearly
in m until it saturates at the matrix size. ``duration_compat_matrix``
connects (duration, label) unknowns whose two segments fit inside a span
budget together; reordering can shrink its bandwidth, but never below the
clique of all pairs with duration <= span // 2.

The reordering here is plain reverse Cuthill-McKee on the symmetrized
pattern, written out directly (breadth-first, neighbors visited in
degree-then-index order, result reversed) so its tie-breaking is pinned by
this module and not by whatever a library version does this year.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Sequence

import numpy as np

from .potentials import CSV_HEADER

__all__ = [
    "duration_compat_matrix",
    "bandwidth",
    "step_adjacency",
    "boolean_power",
    "boolean_power_bandwidth",
    "power_bandwidth_law",
    "clique_lower_bound",
    "span_class",
    "rcm_order",
    "rcm_bandwidth_report",
    "bandwidth_report_csv",
    "span_class_summary",
]


def duration_compat_matrix(span: int, K: int, C: int) -> np.ndarray:
    """Boolean matrix over (duration, label) pairs that fit a span together.

    Row/column index is duration-major: (d, y) lives at (d-1)*C + y, with
    durations 1..min(K, span). Entry is True iff d1 + d2 <= span; labels never
    restrict compatibility, they just blow the pattern up by a CxC block.
    """
    if span < 1 or K < 1 or C < 1:
        raise ValueError(f"span, K, C must be positive, got ({span}, {K}, {C})")
    d = np.arange(1, min(K, span) + 1)
    pair_ok = d[:, None] + d[None, :] <= span
    return np.kron(pair_ok, np.ones((C, C), dtype=bool))


def bandwidth(M: np.ndarray) -> int:
    """Largest |i - j| over the nonzero pattern; 0 for an empty matrix."""
    i, j = np.nonzero(M)
    if i.size == 0:
        return 0
    return int(np.abs(i - j).max())


def step_adjacency(T: int, K: int) -> np.ndarray:
    """One-segment reachability between the T+1 sequence boundaries."""
    i = np.arange(T + 1)
    d = i[None, :] - i[:, None]
    return (d >= 1) & (d <= K)


def boolean_power(M: np.ndarray, m: int) -> np.ndarray:
    """m-th boolean matrix power (reachability in exactly m steps)."""
    if m < 1:
        raise ValueError(f"power must be >= 1, got {m}")
    A = np.asarray(M, dtype=np.int64)
    P = A.copy()
    for _ in range(m - 1):
        P = (P @ A > 0).astype(np.int64)
    return P > 0


def power_bandwidth_law(T: int, K: int, m: int) -> int:
    """Closed form for bandwidth(step_adjacency(T, K) ** m).

    m segments reach offsets m..m*K, clipped by the T+1 boundary indices; more
    segments than positions leaves no reachable pair at all, hence 0 there
    rather than min(T, m*K).
    """
    if m > T:
        return 0
    return min(T, m * K)


def boolean_power_bandwidth(T: int, K: int, m: int) -> int:
    """Bandwidth of the m-th boolean power of the step adjacency, computed."""
    return bandwidth(boolean_power(step_adjacency(T, K), m))


def clique_lower_bound(span: int, C: int) -> int:
    """Bandwidth floor C * (span // 2) - 1 from the short-duration clique.

    Every (duration, label) pair with duration <= span // 2 is compatible with
    every other such pair, so those C * (span // 2) unknowns form a clique and
    any ordering must keep some two of them clique_size - 1 apart. The clique
    premise needs all durations up to span // 2 to exist, i.e. span <= 2K;
    beyond that the bound does not apply (and this function ignores K by
    construction).
    """
    return C * (span // 2) - 1


def span_class(span: int, K: int) -> str:
    """small: 2*span <= K; large: span >= K; moderate in between."""
    if 2 * span <= K:
        return "small"
    if span >= K:
        return "large"
    return "moderate"


def rcm_order(M: np.ndarray) -> np.ndarray:
    """Reverse Cuthill-McKee permutation of a (symmetrized) boolean pattern.

    Per connected component: start at a minimum-degree node (smallest index on
    ties), breadth-first with neighbors enqueued in (degree, index) order,
    then reverse the whole visit order.
    """
    A = np.asarray(M, dtype=bool)
    A = A | A.T
    n = A.shape[0]
    deg = A.sum(axis=1)
    visited = np.zeros(n, dtype=bool)
    order: list[int] = []
    while len(order) < n:
        unvisited = np.flatnonzero(~visited)
        start = int(unvisited[np.argmin(deg[unvisited])])
        visited[start] = True
        queue = deque([start])
        while queue:
            v = queue.popleft()
            order.append(v)
            nbrs = np.flatnonzero(A[v] & ~visited)
            for u in sorted(nbrs, key=lambda u: (deg[u], u)):
                visited[u] = True
                queue.append(int(u))
    return np.array(order[::-1], dtype=np.int64)


def rcm_bandwidth_report(
    spans: Iterable[int], K: int, C: int
) -> list[dict]:
    """Natural vs. RCM bandwidth rows for each span budget, ratios included.

    ``ratio`` is bandwidth / (n - 1) — the fraction of the worst possible
    band a dense ordering-oblivious solver would have to assume.
    """
    rows: list[dict] = []
    for span in spans:
        M = duration_compat_matrix(span, K, C)
        n = M.shape[0]
        perm = rcm_order(M)
        denom = max(1, n - 1)
        for ordering, bw in (
            ("natural", bandwidth(M)),
            ("rcm", bandwidth(M[np.ix_(perm, perm)])),
        ):
            rows.append(
                {
                    "S": int(span),
                    "K": int(K),
                    "C": int(C),
                    "n": int(n),
                    "ordering": ordering,
                    "bw": int(bw),
                    "ratio": bw / denom,
                    "span_class": span_class(span, K),
                }
            )
    return rows


def span_class_summary(rows: Sequence[dict]) -> dict[str, dict]:
    """Best achieved ratio per span class, over every ordering and config.

    "Best" means the smallest bandwidth any implemented ordering reached for a
    configuration — the quantity that has to stay large for the infeasibility
    argument to hold on wide spans.
    """
    best_per_config: dict[tuple, float] = {}
    classes: dict[tuple, str] = {}
    for r in rows:
        key = (r["S"], r["K"], r["C"])
        best_per_config[key] = min(best_per_config.get(key, float("inf")), r["ratio"])
        classes[key] = r["span_class"]
    out: dict[str, dict] = {}
    for key, ratio in best_per_config.items():
        cls = classes[key]
        entry = out.setdefault(cls, {"min_ratio": ratio, "max_ratio": ratio, "configs": 0})
        entry["min_ratio"] = min(entry["min_ratio"], ratio)
        entry["max_ratio"] = max(entry["max_ratio"], ratio)
        entry["configs"] += 1
    return out


_CSV_COLUMNS = ("S", "K", "C", "n", "ordering", "bw", "ratio", "span_class")


def bandwidth_report_csv(rows: Sequence[dict]) -> str:
    lines = [CSV_HEADER, ",".join(_CSV_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in _CSV_COLUMNS
            )
        )
    return "\n".join(lines) + "\n"
