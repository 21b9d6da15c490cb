"""Numeric gradient checks, cross-backend equivalence, and a training demo.

Three independent ways to catch a wrong gradient or a drifting backend:
central finite differences against the analytic backward pass, pairwise
agreement of every implemented forward/backward/decode route on seeded random
instances, and a small gradient-descent run that must produce the same loss
curve no matter which backend computed the gradients.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .potentials import (
    CSV_HEADER,
    CenteringMode,
    CumulativeScores,
    EmissionBatch,
    Segmentation,
    SemiCRFParams,
    build_scores,
    segment_path_score,
)
from .reference import (
    dense_backward_marginals,
    dense_forward,
    dense_viterbi,
    enumerate_logZ,
)
from .streaming import (
    BackendKind,
    ContractViolation,
    decode,
    forward_logZ,
    k1_forward,
    k2_forward,
    posterior,
    streaming_viterbi,
)
from ._numerics import logsumexp

__all__ = [
    "COSINE_MIN",
    "NORM_MAX_ERR_MAX",
    "GRADCHECK_GUARD",
    "finite_diff_gradcheck",
    "gradcheck_report_csv",
    "equivalence_instance",
    "backend_equivalence",
    "training_loss_and_grads",
    "training_convergence_demo",
    "training_curves_csv",
    "DEFAULT_TRAIN_CONFIG",
]

COSINE_MIN = 0.9999
NORM_MAX_ERR_MAX = 5e-5
GRADCHECK_GUARD = 10**6  # max T * K * C^2 the element-wise sweep will accept

_MODES = (CenteringMode.NONE, CenteringMode.MEAN, CenteringMode.SHARED_MAX)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.ravel(), b.ravel()) / (na * nb))


def _norm_max_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def finite_diff_gradcheck(
    cum: CumulativeScores,
    params: SemiCRFParams,
    eps: float,
    *,
    include_grads: bool = False,
) -> dict:
    """Central differences over every element of the score/parameter tensors.

    Each element is nudged by ±eps and the log-partition re-evaluated with
    forward passes only, so the comparison never shares code with the
    backward pass it is judging. Cumulative-score rows 1..T are swept (row 0
    is pinned to zero by construction); projections join when present.
    """
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    K = params.max_duration
    work = T * K * C * C
    if work > GRADCHECK_GUARD:
        raise ContractViolation(
            f"gradcheck guard exceeded: T*K*C^2 = {work} > {GRADCHECK_GUARD}; "
            "the element sweep would need too many forward passes"
        )

    _, grads, _ = posterior(cum, params)

    def f(c2: CumulativeScores, p2: SemiCRFParams) -> float:
        return float(forward_logZ(c2, p2).sum())

    def sweep(base: np.ndarray, rebuild) -> np.ndarray:
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        src = base.reshape(-1)
        for i in range(src.size):
            bumped = src.copy()
            bumped[i] = src[i] + eps
            hi = f(*rebuild(bumped.reshape(base.shape)))
            bumped[i] = src[i] - eps
            lo = f(*rebuild(bumped.reshape(base.shape)))
            flat[i] = (hi - lo) / (2.0 * eps)
        return numeric

    pairs: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    interior = cum.S[:, 1:, :]
    num_S = sweep(
        interior,
        lambda block: (replace(cum, S=np.concatenate([cum.S[:, :1, :], block], axis=1)), params),
    )
    pairs["cum_scores"] = (grads.grad_S[:, 1:, :], num_S)
    pairs["transition"] = (
        grads.grad_T,
        sweep(params.transition, lambda t2: (cum, replace(params, transition=t2))),
    )
    pairs["duration_bias"] = (
        grads.grad_B,
        sweep(params.duration_bias, lambda b2: (cum, replace(params, duration_bias=b2))),
    )
    if cum.proj_start is not None:
        pairs["proj_start"] = (
            grads.grad_P_start,
            sweep(cum.proj_start, lambda p2: (replace(cum, proj_start=p2), params)),
        )
    if cum.proj_end is not None:
        pairs["proj_end"] = (
            grads.grad_P_end,
            sweep(cum.proj_end, lambda p2: (replace(cum, proj_end=p2), params)),
        )

    tensors: dict[str, dict] = {}
    passed = True
    for name, (analytic, numeric) in pairs.items():
        row: dict = {
            "elements": int(numeric.size),
            "cosine": _cosine(analytic, numeric),
            "norm_max_err": _norm_max_err(analytic, numeric),
        }
        passed = passed and row["cosine"] >= COSINE_MIN and row["norm_max_err"] < NORM_MAX_ERR_MAX
        if include_grads:
            row["analytic"] = analytic
            row["numeric"] = numeric
        tensors[name] = row
    return {
        "eps": float(eps),
        "dims": {"B": B, "T": T, "K": K, "C": C},
        "tensors": tensors,
        "passed": passed,
    }


def gradcheck_report_csv(report: dict) -> str:
    lines = [CSV_HEADER, "tensor,elements,cosine,norm_max_err"]
    for name, row in report["tensors"].items():
        lines.append(f"{name},{row['elements']},{row['cosine']!r},{row['norm_max_err']!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Cross-backend equivalence campaign
# ---------------------------------------------------------------------------


def equivalence_instance(
    seed: int,
    *,
    T: int,
    K: int,
    C: int,
    B: int = 1,
    mode: CenteringMode = CenteringMode.NONE,
    ragged: bool = False,
    projections: bool = False,
) -> tuple[EmissionBatch, SemiCRFParams, CumulativeScores]:
    """Deterministic random instance keyed by (seed, dims, flags).

    Emissions ~ U[-2, 2], transitions ~ U[-1, 1], duration bias ~ U[-0.5, 0.5],
    projections (when requested) ~ U[-0.5, 0.5]. The ingredients alone
    reconstruct the instance bit-exactly, which is what makes failure rows
    replayable.
    """
    key = [seed, T, K, C, B, int(ragged), int(projections), _MODES.index(mode)]
    rng = np.random.default_rng(key)
    emissions = rng.uniform(-2.0, 2.0, (B, T, C))
    lengths = np.full(B, T, dtype=np.int64)
    if ragged and B > 1:
        lengths = rng.integers(1, T + 1, size=B)
        lengths[0] = T
    batch = EmissionBatch(emissions, lengths)
    params = SemiCRFParams(rng.uniform(-1.0, 1.0, (C, C)), rng.uniform(-0.5, 0.5, (K, C)))
    ps = pe = None
    if projections:
        ps = rng.uniform(-0.5, 0.5, (B, T, C))
        pe = rng.uniform(-0.5, 0.5, (B, T, C))
    cum = build_scores(batch, params, mode, proj_start=ps, proj_end=pe)
    return batch, params, cum


def _max_rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _grad_diff(dense, stream) -> float:
    worst = 0.0
    fields = [("grad_S", True), ("grad_T", True), ("grad_B", True),
              ("grad_P_start", False), ("grad_P_end", False)]
    for name, required in fields:
        d, s = getattr(dense, name), getattr(stream, name)
        if d is None or s is None:
            if required or (d is None) != (s is None):
                if required:
                    raise AssertionError(f"{name} missing from a gradient set")
            continue
        scale = max(1.0, float(np.abs(d).max(initial=0.0)))
        worst = max(worst, float(np.abs(d - s).max(initial=0.0)) / scale)
    return worst


def backend_equivalence(
    trials: int,
    max_T: int = 6,
    max_K: int = 3,
    max_C: int = 3,
    seed: int = 0,
    *,
    max_B: int = 2,
) -> dict:
    """Every implemented route checked against every other on random instances.

    Per trial: dense vs streaming log-partition (1e-9 relative), enumeration
    when the instance is small enough to enumerate, the k1/k2 closed routes
    when the duration bound allows them, gradient agreement (1e-8 on a
    max-|dense| scale), and exact Viterbi path identity. Failures never stop
    the campaign; each carries the coordinates that rebuild its instance.
    """
    rows: list[dict] = []
    failures: list[dict] = []
    max_rel_logZ = 0.0
    max_grad_diff = 0.0
    enumerated = 0
    for trial in range(trials):
        dims_rng = np.random.default_rng([seed, trial])
        T = int(dims_rng.integers(1, max_T + 1))
        K = int(dims_rng.integers(1, max_K + 1))
        C = int(dims_rng.integers(1, max_C + 1))
        B = int(dims_rng.integers(1, max_B + 1))
        mode = _MODES[int(dims_rng.integers(0, len(_MODES)))]
        ragged = B > 1 and bool(dims_rng.integers(0, 2))
        projections = bool(dims_rng.integers(0, 4) == 0)
        row = {
            "trial": trial, "seed": seed, "T": T, "K": K, "C": C, "B": B,
            "mode": mode.value, "ragged": ragged, "projections": projections,
            "enumerated": False, "ok": True,
        }

        def fail(stage: str, detail: str) -> None:
            row["ok"] = False
            failures.append(dict(row, stage=stage, detail=detail))

        _, params, cum = equivalence_instance(
            seed, T=T, K=K, C=C, B=B, mode=mode, ragged=ragged, projections=projections
        )
        try:
            msgs = dense_forward(cum, params)
            logZ_stream = forward_logZ(cum, params, backend=BackendKind.Streaming)
            rel = _max_rel(logZ_stream, msgs.logZ)
            max_rel_logZ = max(max_rel_logZ, rel)
            if rel > 1e-9:
                fail("logZ", f"dense vs streaming rel err {rel:.3e}")

            if K == 1 and not cum.has_projections:
                rel = _max_rel(k1_forward(cum, params), msgs.logZ)
                max_rel_logZ = max(max_rel_logZ, rel)
                if rel > 1e-9:
                    fail("k1", f"rel err {rel:.3e}")
            if K == 2 and not cum.has_projections:
                rel = _max_rel(k2_forward(cum, params), msgs.logZ)
                max_rel_logZ = max(max_rel_logZ, rel)
                if rel > 1e-9:
                    fail("k2", f"rel err {rel:.3e}")

            if T <= 12 and K <= 4 and C <= 4:
                row["enumerated"] = True
                enumerated += 1
                for b in range(B):
                    rel = abs(enumerate_logZ(cum, params, b) - float(msgs.logZ[b]))
                    rel /= max(1.0, abs(float(msgs.logZ[b])))
                    max_rel_logZ = max(max_rel_logZ, rel)
                    if rel > 1e-9:
                        fail("enumeration", f"b={b} rel err {rel:.3e}")

            _, grads_dense = dense_backward_marginals(cum, params, msgs)
            _, grads_stream, _ = posterior(cum, params)
            gd = _grad_diff(grads_dense, grads_stream)
            max_grad_diff = max(max_grad_diff, gd)
            if gd > 1e-8:
                fail("gradients", f"max scaled diff {gd:.3e}")

            paths_stream, _ = streaming_viterbi(cum, params)
            paths_front, _ = decode(cum, params)
            for b in range(B):
                seg_dense, _ = dense_viterbi(cum, params, b)
                if seg_dense.segments != paths_stream[b].segments:
                    fail("viterbi", f"b={b} dense vs streaming paths differ")
                if seg_dense.segments != paths_front[b].segments:
                    fail("viterbi", f"b={b} dense vs dispatched paths differ")
        except Exception as exc:  # noqa: BLE001 - campaign must keep going
            fail("exception", f"{type(exc).__name__}: {exc}")
        rows.append(row)

    return {
        "trials": trials,
        "seed": seed,
        "bounds": {"max_T": max_T, "max_K": max_K, "max_C": max_C, "max_B": max_B},
        "rows": rows,
        "failures": failures,
        "all_pass": not failures,
        "enumerated": enumerated,
        "max_rel_logZ": max_rel_logZ,
        "max_grad_diff": max_grad_diff,
    }


# ---------------------------------------------------------------------------
# Training convergence demo
# ---------------------------------------------------------------------------

DEFAULT_TRAIN_CONFIG = {
    "B": 4,
    "T": 160,
    "C": 12,
    "K": 12,
    "lr": 0.05,
    "seed": 20240817,
    "train_emissions": True,
}


def _gold_score_and_grads(
    cum: CumulativeScores,
    params: SemiCRFParams,
    golds: list[Segmentation],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Log-score of each gold tiling plus its gradients in (e, T, B).

    The gold score keeps the model's sum over virtual source labels, so its
    transition gradient softmaxes the source at the first segment and counts
    indicators everywhere else.
    """
    B, T, C = cum.batch_size, cum.max_length, cum.num_labels
    K = params.max_duration
    scores = np.zeros(B)
    g_e = np.zeros((B, T, C))
    g_T = np.zeros((C, C))
    g_B = np.zeros((K, C))
    for b, gold in enumerate(golds):
        per_source = segment_path_score(cum, params, gold, b)
        scores[b] = float(logsumexp(per_source, axis=0))
        p_src = np.exp(per_source - scores[b])
        prev = None
        for s, e, c in gold:
            g_e[b, s:e, c] += 1.0
            g_B[e - s - 1, c] += 1.0
            if prev is None:
                g_T[:, c] += p_src
            else:
                g_T[prev, c] += 1.0
            prev = c
    return scores, g_e, g_T, g_B


def training_loss_and_grads(
    batch: EmissionBatch,
    params: SemiCRFParams,
    golds: list[Segmentation],
    backend: str,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean NLL of the gold tilings and its gradients in (emissions, T, B).

    The emission gradient telescopes out of the cumulative-score gradient:
    position u feeds every boundary row after it, so its gradient is the
    suffix sum of grad_S over rows u+1..T.
    """
    cum = build_scores(batch, params, CenteringMode.NONE)
    if backend == "dense":
        msgs = dense_forward(cum, params)
        logZ = msgs.logZ
        _, grads = dense_backward_marginals(cum, params, msgs)
    elif backend == "streaming":
        logZ, grads, _ = posterior(cum, params)
    else:
        raise ValueError(f"unknown backend {backend!r}; expected 'dense' or 'streaming'")

    ge_model = grads.grad_S[:, :0:-1, :].cumsum(axis=1)[:, ::-1, :]
    gold_scores, ge_gold, gT_gold, gB_gold = _gold_score_and_grads(cum, params, golds)
    B = batch.batch_size
    nll = float(np.mean(logZ - gold_scores))
    grad_e = (ge_model - ge_gold) / B
    grad_T = (grads.grad_T - gT_gold) / B
    grad_B = (grads.grad_B - gB_gold) / B
    return nll, grad_e, grad_T, grad_B


def training_convergence_demo(
    config: dict | None = None,
    epochs: int = 100,
    backends: tuple[str, ...] = ("dense", "streaming"),
) -> dict:
    """Plain gradient descent run once per backend from identical state.

    Every backend sees the same synthetic batch, the same zero-initialized
    transition/duration parameters, and the same learning rate; the only
    difference is who computes the gradients. Five consecutive loss increases
    are reported as divergence but never stop the run.
    """
    cfg = dict(DEFAULT_TRAIN_CONFIG)
    if config:
        cfg.update(config)
    B, T, C, K = cfg["B"], cfg["T"], cfg["C"], cfg["K"]
    lr = cfg["lr"] if "lr" in cfg else 0.05
    train_emissions = cfg.get("train_emissions", True)

    from .datagen import generate_imbalanced

    seqs, golds = [], []
    for b in range(B):
        batch_b, gold_b = generate_imbalanced(
            T, C, (1.0 / C,) * C, 1.0, seed=[cfg["seed"], b], max_duration=K
        )
        seqs.append(batch_b.emissions[0])
        golds.append(gold_b)
    base_emissions = np.stack(seqs)
    lengths = np.full(B, T, dtype=np.int64)

    out: dict[str, dict] = {}
    for backend in backends:
        e = base_emissions.copy()
        t_mat = np.zeros((C, C))
        b_mat = np.zeros((K, C))

        def evaluate():
            return training_loss_and_grads(
                EmissionBatch(e, lengths), SemiCRFParams(t_mat, b_mat), golds, backend
            )

        nll, ge, gT, gB = evaluate()
        curve = [nll]
        streak = 0
        diverged_at = None
        for epoch in range(epochs):
            if train_emissions:
                e = e - lr * ge
            t_mat = t_mat - lr * gT
            b_mat = b_mat - lr * gB
            nll, ge, gT, gB = evaluate()
            curve.append(nll)
            streak = streak + 1 if curve[-1] > curve[-2] else 0
            if streak >= 5 and diverged_at is None:
                diverged_at = epoch
        out[backend] = {
            "curve": curve,
            "final": curve[-1],
            "diverged": diverged_at is not None,
            "diverged_at": diverged_at,
        }

    report = {"config": cfg, "epochs": epochs, "backends": out,
              "final_rel_diff": None, "curve_cosine": None}
    if len(backends) >= 2:
        ref, other = out[backends[0]], out[backends[1]]
        report["final_rel_diff"] = abs(other["final"] - ref["final"]) / max(
            abs(ref["final"]), 1e-12
        )
        report["curve_cosine"] = _cosine(np.array(ref["curve"]), np.array(other["curve"]))
    return report


def training_curves_csv(report: dict) -> str:
    names = list(report["backends"])
    lines = [CSV_HEADER, "epoch," + ",".join(names)]
    curves = [report["backends"][n]["curve"] for n in names]
    for i, values in enumerate(zip(*curves)):
        lines.append(str(i) + "," + ",".join(repr(v) for v in values))
    return "\n".join(lines) + "\n"
