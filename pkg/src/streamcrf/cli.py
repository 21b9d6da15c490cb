"""Command-line front end: benchmarks, checks, demos, and decoding.

Subcommands
-----------
bench             forward/backward wall time and working-set bytes per backend
gradcheck         finite-difference check of the analytic gradients
oracle            randomized cross-backend equivalence campaign (or one replay)
train-demo        identical gradient-descent runs on every backend
ablate-centering  decoded segment counts per centering mode on skewed data
bandwidth         duration-compatibility bandwidth under natural/RCM orderings
decode            best segmentations (and optional marginals) for stored inputs
selfcheck         one small instance of every check above

Conventions shared by all subcommands: the report goes to stdout unless
``--out`` redirects it, ``--format`` picks csv or json where both exist, the
exit code is 0 exactly when every check passed (report-only commands exit 0
on completion), and any failure — threshold or exception — leaves a one-line
machine-readable JSON object on stderr.

The numerical imports are deferred into the command functions so that
``--threads`` can pin the BLAS pool sizes before the libraries load; in a
fresh console-script process that ordering always holds.

Timing semantics: ``wall_ms_forward`` is one log-partition pass;
``wall_ms_backward`` is a full gradient pass from scratch (it contains its own
forward), which keeps the column comparable across backends that cannot reuse
each other's intermediate state. Both are medians over ``--repeats`` runs
after one warmup. ``peak_working_bytes`` comes from the solver's own
allocation ledger — it counts the DP buffers the algorithm asked for, not
process RSS.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

BENCH_COLUMNS = (
    "backend",
    "T",
    "K",
    "C",
    "B",
    "wall_ms_forward",
    "wall_ms_backward",
    "peak_working_bytes",
    "positions_per_sec",
    "status",
)

_ORACLE_COLUMNS = (
    "trial", "seed", "T", "K", "C", "B", "mode", "ragged", "projections",
    "enumerated", "ok",
)


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------


def _emit(args: argparse.Namespace, text: str) -> None:
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(args: argparse.Namespace, doc: dict) -> None:
    _emit(args, json.dumps(doc, indent=1) + "\n")


def _fail_stderr(command: str | None, reason: str, **extra) -> None:
    doc = {"command": command, "status": "fail", "reason": reason}
    doc.update(extra)
    sys.stderr.write(json.dumps(doc) + "\n")


def _finish_check(args: argparse.Namespace, doc: dict, passed: bool) -> int:
    """Emit a check command's report and translate its verdict to an exit code."""
    doc["status"] = "pass" if passed else "fail"
    if args.format == "csv" and "csv" in doc:
        _emit(args, doc.pop("csv"))
    else:
        doc.pop("csv", None)
        _emit_json(args, doc)
    if not passed:
        _fail_stderr(doc["command"], "check thresholds not met")
    return 0 if passed else 1


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _rows_csv(header: str, columns, rows) -> str:
    from .potentials import CSV_HEADER

    lines = [CSV_HEADER, header]
    for row in rows:
        lines.append(",".join(_csv_cell(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _median_ms(fn, repeats: int) -> float:
    fn()  # warmup: first call pays allocator and cache fills
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def cmd_bench(args: argparse.Namespace) -> int:
    from .accounting import MemoryLedger
    from .reference import GuardExceeded, dense_backward_marginals, dense_forward
    from .streaming import (
        BackendKind,
        dispatch,
        forward_logZ,
        posterior,
        streaming_backward,
        streaming_forward,
    )
    from .validation import equivalence_instance

    rows = []
    for T in args.T:
        _, params, cum = equivalence_instance(args.seed, T=T, K=args.K, C=args.C, B=args.B)
        if args.backend == "dense":
            label = "dense"
        elif args.backend == "streaming":
            label = "streaming"
        else:
            label = dispatch(params, cum).value

        row = dict.fromkeys(BENCH_COLUMNS)
        row.update(backend=label, T=T, K=args.K, C=args.C, B=args.B, status="ok")
        try:
            if label == "dense":
                forward = lambda: dense_forward(cum, params)

                def backward():
                    msgs = dense_forward(cum, params)
                    dense_backward_marginals(cum, params, msgs)

                ledger = MemoryLedger()
                dense_backward_marginals(cum, params, dense_forward(cum, params, ledger), ledger)
            else:
                kind = BackendKind(label)
                forward = lambda: forward_logZ(cum, params, args.delta, backend=kind)
                if kind is BackendKind.LinearK1:
                    backward = lambda: posterior(cum, params)
                else:

                    def backward():
                        logZ, ckpts = streaming_forward(cum, params, args.delta)
                        streaming_backward(cum, params, logZ, ckpts)

                ledger = MemoryLedger()
                logZ, ckpts = streaming_forward(cum, params, args.delta, ledger=ledger)
                if kind is not BackendKind.LinearK1:
                    streaming_backward(cum, params, logZ, ckpts, ledger=ledger)

            fwd_ms = _median_ms(forward, args.repeats)
            bwd_ms = _median_ms(backward, args.repeats)
            row.update(
                wall_ms_forward=fwd_ms,
                wall_ms_backward=bwd_ms,
                peak_working_bytes=ledger.total(),
                positions_per_sec=args.B * T / (fwd_ms / 1e3),
            )
        except GuardExceeded:
            row["status"] = "OOM-GUARD"
        rows.append(row)

    if args.format == "csv":
        _emit(args, _rows_csv(",".join(BENCH_COLUMNS), BENCH_COLUMNS, rows))
    else:
        _emit_json(args, {"command": "bench", "rows": rows})
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .validation import equivalence_instance, finite_diff_gradcheck, gradcheck_report_csv

    _, params, cum = equivalence_instance(args.seed, T=args.T, K=args.K, C=args.C, B=args.B)
    report = finite_diff_gradcheck(cum, params, args.eps)
    doc = {"command": "gradcheck", "report": report, "csv": gradcheck_report_csv(report)}
    return _finish_check(args, doc, report["passed"])


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def _replay_report(args: argparse.Namespace) -> dict:
    """Re-run every applicable equivalence stage on one pinned instance."""
    import numpy as np

    from .potentials import CenteringMode
    from .reference import (
        dense_backward_marginals,
        dense_forward,
        dense_viterbi,
        enumerate_logZ,
    )
    from .streaming import (
        BackendKind,
        decode,
        forward_logZ,
        k1_forward,
        k2_forward,
        posterior,
        streaming_viterbi,
    )
    from .validation import equivalence_instance

    T, K, C, B = args.T, args.K, args.C, args.B
    mode = CenteringMode(args.mode)
    _, params, cum = equivalence_instance(
        args.seed, T=T, K=K, C=C, B=B,
        mode=mode, ragged=args.ragged, projections=args.projections,
    )
    failures: list[dict] = []

    def fail(stage: str, detail: str) -> None:
        failures.append({"stage": stage, "detail": detail})

    msgs = dense_forward(cum, params)
    stream = forward_logZ(cum, params, backend=BackendKind.Streaming)
    rel = float(np.max(np.abs(stream - msgs.logZ) / np.maximum(1.0, np.abs(msgs.logZ))))
    if rel > 1e-9:
        fail("logZ", f"dense vs streaming rel err {rel:.3e}")
    if K == 1 and not cum.has_projections:
        k1 = k1_forward(cum, params)
        if np.max(np.abs(k1 - msgs.logZ)) > 1e-9 * max(1.0, float(np.abs(msgs.logZ).max())):
            fail("k1", "closed duration-1 route disagrees")
    if K == 2 and not cum.has_projections:
        k2 = k2_forward(cum, params)
        if np.max(np.abs(k2 - msgs.logZ)) > 1e-9 * max(1.0, float(np.abs(msgs.logZ).max())):
            fail("k2", "collapsed duration-2 route disagrees")
    if T <= 12 and K <= 4 and C <= 4:
        for b in range(B):
            diff = abs(enumerate_logZ(cum, params, b) - float(msgs.logZ[b]))
            if diff / max(1.0, abs(float(msgs.logZ[b]))) > 1e-9:
                fail("enumeration", f"b={b} disagrees with exhaustive sum")

    _, grads_dense = dense_backward_marginals(cum, params, msgs)
    _, grads_stream, _ = posterior(cum, params)
    gd = 0.0
    for name in ("grad_S", "grad_T", "grad_B", "grad_P_start", "grad_P_end"):
        d, s = getattr(grads_dense, name), getattr(grads_stream, name)
        if d is None or s is None:
            continue
        scale = max(1.0, float(np.abs(d).max(initial=0.0)))
        gd = max(gd, float(np.abs(d - s).max(initial=0.0)) / scale)
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

    return {
        "trials": 1,
        "seed": args.seed,
        "instance": {
            "T": T, "K": K, "C": C, "B": B, "mode": mode.value,
            "ragged": args.ragged, "projections": args.projections,
        },
        "failures": failures,
        "all_pass": not failures,
        "max_rel_logZ": rel,
        "max_grad_diff": gd,
    }


def cmd_oracle(args: argparse.Namespace) -> int:
    from .validation import backend_equivalence

    if args.replay:
        report = _replay_report(args)
    else:
        report = backend_equivalence(
            args.trials, max_T=args.T, max_K=args.K, max_C=args.C,
            seed=args.seed, max_B=args.B,
        )
    doc = {"command": "oracle", "report": report}
    if "rows" in report:
        doc["csv"] = _rows_csv(",".join(_ORACLE_COLUMNS), _ORACLE_COLUMNS, report["rows"])
    return _finish_check(args, doc, report["all_pass"])


# ---------------------------------------------------------------------------
# train-demo
# ---------------------------------------------------------------------------


def cmd_train_demo(args: argparse.Namespace) -> int:
    from .validation import training_convergence_demo, training_curves_csv

    config = {"B": args.B, "T": args.T, "C": args.C, "K": args.K,
              "lr": args.lr, "seed": args.seed}
    report = training_convergence_demo(config, epochs=args.epochs)
    passed = (
        report["final_rel_diff"] is not None
        and report["final_rel_diff"] <= 1e-9
        and report["curve_cosine"] >= 0.999999
    )
    doc = {"command": "train-demo", "report": report, "csv": training_curves_csv(report)}
    return _finish_check(args, doc, passed)


# ---------------------------------------------------------------------------
# ablate-centering
# ---------------------------------------------------------------------------


def _default_proportions(C: int) -> tuple[float, ...]:
    if C == 3:
        return (0.75, 0.15, 0.10)
    weights = [2.0 ** -i for i in range(C)]
    total = sum(weights)
    return tuple(w / total for w in weights)


def cmd_ablate(args: argparse.Namespace) -> int:
    from .datagen import ablation_report_csv, centering_ablation
    from .potentials import CenteringMode

    proportions = tuple(args.proportions) if args.proportions else _default_proportions(args.C)
    modes = (CenteringMode.NONE, CenteringMode.MEAN, CenteringMode.SHARED_MAX)
    report = centering_ablation(args.T, args.C, proportions, modes, args.seed)
    if args.format == "csv":
        _emit(args, ablation_report_csv(report))
    else:
        _emit_json(args, {"command": "ablate-centering", "report": report})
    return 0


# ---------------------------------------------------------------------------
# bandwidth
# ---------------------------------------------------------------------------


def cmd_bandwidth(args: argparse.Namespace) -> int:
    from .banded import bandwidth_report_csv, rcm_bandwidth_report, span_class_summary

    rows = rcm_bandwidth_report(args.spans, args.K, args.C)
    if args.format == "csv":
        _emit(args, bandwidth_report_csv(rows))
    else:
        report = {"rows": rows, "span_class_summary": span_class_summary(rows)}
        _emit_json(args, {"command": "bandwidth", "report": report})
    return 0


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def cmd_decode(args: argparse.Namespace) -> int:
    from .potentials import (
        CenteringMode,
        build_scores,
        load_emissions_csv,
        load_emissions_json,
        load_params_json,
        segmentations_to_json,
    )
    from .reference import dense_viterbi
    from .streaming import BackendKind, decode, posterior

    params = load_params_json(args.params)
    if args.emissions.endswith(".json"):
        batch = load_emissions_json(args.emissions)
    else:
        batch = load_emissions_csv(args.emissions)
    cum = build_scores(batch, params, CenteringMode(args.centering))

    if args.backend == "dense":
        pairs = [dense_viterbi(cum, params, b) for b in range(batch.batch_size)]
        segs = [seg for seg, _ in pairs]
        scores = [score for _, score in pairs]
    else:
        forced = BackendKind.Streaming if args.backend == "streaming" else None
        segs, score_arr = decode(cum, params, backend=forced)
        scores = [float(v) for v in score_arr]

    doc = {
        "command": "decode",
        "lengths": [int(v) for v in batch.lengths],
        "segmentations": segmentations_to_json(segs),
        "scores": scores,
    }
    if args.marginals:
        _, _, marg = posterior(cum, params, args.delta)
        lengths = [int(v) for v in marg.lengths]
        mdoc = {
            "lengths": lengths,
            "position_marginals": [
                marg.position_marginals[b, :L, :].tolist() for b, L in enumerate(lengths)
            ],
            "boundary_posterior": [
                marg.boundary_posterior[b, :L].tolist() for b, L in enumerate(lengths)
            ],
            "expected_segment_count": [float(v) for v in marg.expected_segment_count],
        }
        with open(args.marginals, "w") as fh:
            json.dump(mdoc, fh, indent=1)
    _emit_json(args, doc)
    return 0


# ---------------------------------------------------------------------------
# selfcheck
# ---------------------------------------------------------------------------


def cmd_selfcheck(args: argparse.Namespace) -> int:
    import math

    import numpy as np

    from .banded import boolean_power_bandwidth, power_bandwidth_law
    from .diagnostics import boundary_entropy, self_consistency_report
    from .streaming import posterior
    from .validation import backend_equivalence, equivalence_instance, finite_diff_gradcheck

    checks: dict[str, bool] = {}

    rep = backend_equivalence(40, seed=args.seed)
    checks["backend_equivalence"] = bool(rep["all_pass"])

    _, params, cum = equivalence_instance(args.seed, T=8, K=3, C=3, B=1, projections=True)
    checks["gradcheck"] = bool(finite_diff_gradcheck(cum, params, args.eps)["passed"])

    _, params, cum = equivalence_instance(args.seed, T=60, K=5, C=4, B=2, ragged=True)
    _, _, marg = posterior(cum, params, args.delta)
    checks["posterior_invariants"] = bool(self_consistency_report(marg)["all_pass"])

    checks["bandwidth_law"] = all(
        boolean_power_bandwidth(24, 3, m) == power_bandwidth_law(24, 3, m)
        for m in (1, 2, 3, 4, 5)
    )

    # Duration bound 1 makes every position a segment start, so the boundary
    # posterior is identically one and its entropy is exactly log(length).
    _, params, cum = equivalence_instance(args.seed, T=12, K=1, C=3, B=1)
    _, _, marg = posterior(cum, params)
    H, _ = boundary_entropy(marg.boundary_posterior, marg.lengths)
    checks["duration_one_boundary"] = bool(
        np.allclose(marg.boundary_posterior[0], 1.0, atol=1e-12)
        and abs(float(H[0]) - math.log(12)) <= 1e-9
    )

    passed = all(checks.values())
    doc = {
        "command": "selfcheck",
        "seed": args.seed,
        "checks": {name: ("pass" if ok else "fail") for name, ok in checks.items()},
    }
    return _finish_check(args, doc, passed)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sp: argparse.ArgumentParser, *, seed: int = 0) -> None:
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", help="write the report to this file instead of stdout")
    sp.add_argument("--format", choices=("csv", "json"), default=None)
    sp.add_argument("--threads", type=int, default=None,
                    help="cap BLAS/OpenMP pool sizes (set before numerics load)")


def _add_dims(sp: argparse.ArgumentParser, *, T=None, K=None, C=None, B=1,
              t_nargs=None, t_help="sequence length") -> None:
    sp.add_argument("--T", type=int, default=T, nargs=t_nargs, help=t_help)
    sp.add_argument("--K", type=int, default=K, help="duration bound")
    sp.add_argument("--C", type=int, default=C, help="label count")
    sp.add_argument("--B", type=int, default=B, help="batch size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamcrf",
        description="Constant-memory segmental CRF inference: checks, benchmarks, demos.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("bench", help="wall time and working-set bytes per backend")
    _add_dims(sp, T=[512], K=8, C=8, t_nargs="+", t_help="sequence lengths to sweep")
    sp.add_argument("--backend", choices=("dense", "streaming", "auto"), default="auto")
    sp.add_argument("--delta", type=int, default=None, help="checkpoint interval")
    sp.add_argument("--repeats", type=int, default=5, help="timed runs (median reported)")
    _add_common(sp)
    sp.set_defaults(func=cmd_bench, format_default="csv")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_dims(sp, T=100, K=25, C=16)
    sp.add_argument("--eps", type=float, default=1e-3, help="finite-difference step")
    _add_common(sp)
    sp.set_defaults(func=cmd_gradcheck, format_default="json")

    sp = sub.add_parser("oracle", help="randomized cross-backend equivalence campaign")
    _add_dims(sp, T=6, K=3, C=3, B=2,
              t_help="sequence length cap (exact length with --replay)")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--replay", action="store_true",
                    help="check the single instance named by the dims/flags")
    sp.add_argument("--mode", choices=("none", "mean", "shared_max"), default="none",
                    help="centering mode (replay only)")
    sp.add_argument("--ragged", action="store_true", help="ragged lengths (replay only)")
    sp.add_argument("--projections", action="store_true",
                    help="boundary projections (replay only)")
    _add_common(sp)
    sp.set_defaults(func=cmd_oracle, format_default="json")

    sp = sub.add_parser("train-demo", help="gradient descent, one run per backend")
    _add_dims(sp, T=160, K=12, C=12, B=4)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--lr", type=float, default=0.05)
    _add_common(sp, seed=20240817)
    sp.set_defaults(func=cmd_train_demo, format_default="json")

    sp = sub.add_parser("ablate-centering", help="decoded counts per centering mode")
    sp.add_argument("--T", type=int, default=4000, help="sequence length")
    sp.add_argument("--C", type=int, default=3, help="label count")
    sp.add_argument("--proportions", type=float, nargs="+", default=None,
                    help="target per-label coverage (defaults to a skewed mix)")
    _add_common(sp)
    sp.set_defaults(func=cmd_ablate, format_default="json")

    sp = sub.add_parser("bandwidth", help="duration-compatibility matrix bandwidth")
    sp.add_argument("--spans", type=int, nargs="+", default=[2, 4, 8, 16])
    sp.add_argument("--K", type=int, default=8, help="duration bound")
    sp.add_argument("--C", type=int, default=2, help="label count")
    _add_common(sp)
    sp.set_defaults(func=cmd_bandwidth, format_default="csv")

    sp = sub.add_parser("decode", help="best segmentations for stored inputs")
    sp.add_argument("--params", required=True, help="parameter JSON file")
    sp.add_argument("--emissions", required=True, help="emissions file (.csv or .json)")
    sp.add_argument("--centering", choices=("none", "mean", "shared_max"), default="none")
    sp.add_argument("--backend", choices=("dense", "streaming", "auto"), default="auto")
    sp.add_argument("--delta", type=int, default=None, help="checkpoint interval")
    sp.add_argument("--marginals", default=None,
                    help="also write posterior marginals to this JSON file")
    _add_common(sp)
    sp.set_defaults(func=cmd_decode, format_default="json")

    sp = sub.add_parser("selfcheck", help="one small instance of every check")
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--delta", type=int, default=None)
    _add_common(sp)
    sp.set_defaults(func=cmd_selfcheck, format_default="json")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = args.format_default
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - the contract is JSON on stderr, code 1
        _fail_stderr(getattr(args, "command", None), str(exc), type=type(exc).__name__)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
