"""Why the step structure admits no narrow band once durations interact.

Part one verifies the reachability law empirically: the m-step pattern of
the boundary graph has bandwidth exactly min(T, m*K). Part two shows that
reordering does not rescue wide spans — the duration-compatibility pattern
contains a clique of all short durations, and neither the natural nor the
Reverse Cuthill-McKee ordering gets below it.
"""

from streamcrf.banded import (
    bandwidth_report_csv,
    boolean_power_bandwidth,
    clique_lower_bound,
    rcm_bandwidth_report,
    span_class_summary,
)

print("m-step bandwidth vs min(T, m*K) at T=40, K=6:")
for m in (1, 2, 4, 8):
    got = boolean_power_bandwidth(40, 6, m)
    print(f"  m={m}: bw={got:3d}  min(T, m*K)={min(40, m * 6)}")

print()
K, C = 6, 3
rows = rcm_bandwidth_report(range(3, 2 * K + 1), K, C)
print(bandwidth_report_csv(rows))

print("clique floor C*floor(S/2)-1 per span:",
      {S: clique_lower_bound(S, C) for S in (4, 6, 8, 12)})
print()
print("best ratio per span class (1.0 = full band, nothing gained):")
for cls, entry in span_class_summary(rows).items():
    print(f"  {cls:>9}: min {entry['min_ratio']:.3f}  max {entry['max_ratio']:.3f}"
          f"  over {entry['configs']} configs")
