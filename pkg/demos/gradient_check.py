"""Finite differences against the analytic backward pass, tensor by tensor.

The numeric side only ever calls the forward pass, so agreement here means
the backward pass earns its keep independently.
"""

from streamcrf import finite_diff_gradcheck
from streamcrf.validation import equivalence_instance, gradcheck_report_csv

_, params, cum = equivalence_instance(11, T=12, K=4, C=3, B=2, projections=True)
report = finite_diff_gradcheck(cum, params, 1e-4)

print(gradcheck_report_csv(report))
print("dims  :", report["dims"])
print("eps   :", report["eps"])
print("passed:", report["passed"])
