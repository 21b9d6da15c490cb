"""Finite-difference gradcheck, cross-backend equivalence, training demo.

The gradcheck's own correctness is anchored two ways: a zero-score instance
whose gradients have a hand-computable closed form (uniform measure over all
(tiling, source) pairs), and tight thresholds on random instances where the
central-difference error is O(eps^2).
"""

import json

import numpy as np
import pytest

from streamcrf.potentials import CSV_HEADER, CenteringMode, EmissionBatch, build_scores
from streamcrf.streaming import ContractViolation
from streamcrf.validation import (
    COSINE_MIN,
    NORM_MAX_ERR_MAX,
    backend_equivalence,
    equivalence_instance,
    finite_diff_gradcheck,
    gradcheck_report_csv,
    training_convergence_demo,
    training_curves_csv,
    training_loss_and_grads,
)


class TestGradcheck:
    def test_zero_scores_closed_form(self):
        # T=2, K=2, C=2, everything zero: 12 equally weighted (tiling, source)
        # pairs. A duration-2 segment of a given label appears in 2 of them;
        # a duration-1 segment of a given label has expected count 8/12.
        batch = EmissionBatch(np.zeros((1, 2, 2)), np.array([2]))
        params = _zero_params(2, 2)
        cum = build_scores(batch, params, CenteringMode.NONE)
        report = finite_diff_gradcheck(cum, params, 1e-3, include_grads=True)
        for kind in ("analytic", "numeric"):
            g = report["tensors"]["duration_bias"][kind]
            tol = 1e-10 if kind == "analytic" else 1e-6
            assert np.allclose(g[1], 1.0 / 6.0, atol=tol)
            assert np.allclose(g[0], 2.0 / 3.0, atol=tol)
        assert report["tensors"]["duration_bias"]["cosine"] >= 1.0 - 1e-12

    def test_random_instance_meets_thresholds(self, rng):
        batch, params, cum = _random_projection_instance(rng, T=10, K=3, C=3)
        report = finite_diff_gradcheck(cum, params, 1e-3)
        assert set(report["tensors"]) == {
            "cum_scores", "transition", "duration_bias", "proj_start", "proj_end",
        }
        for name, row in report["tensors"].items():
            assert row["cosine"] >= COSINE_MIN, name
            assert row["norm_max_err"] < NORM_MAX_ERR_MAX, name
        assert report["passed"] is True
        assert report["tensors"]["cum_scores"]["elements"] == 1 * 10 * 3
        assert report["tensors"]["transition"]["elements"] == 9
        assert report["tensors"]["duration_bias"]["elements"] == 9

    def test_no_projection_keys_without_projections(self, rng):
        _, params, cum = _random_plain_instance(rng, B=2, T=8, K=2, C=2)
        report = finite_diff_gradcheck(cum, params, 1e-3)
        assert set(report["tensors"]) == {"cum_scores", "transition", "duration_bias"}
        assert report["tensors"]["cum_scores"]["elements"] == 2 * 8 * 2
        assert report["passed"] is True

    def test_guard_refuses_large_instances(self, rng):
        _, params, cum = _random_plain_instance(rng, B=1, T=500, K=60, C=8)
        # 500 * 60 * 64 = 1.92e6 work units > 1e6
        with pytest.raises(ContractViolation, match="guard"):
            finite_diff_gradcheck(cum, params, 1e-3)

    def test_report_is_json_serializable(self, rng):
        _, params, cum = _random_plain_instance(rng, B=1, T=6, K=2, C=2)
        report = finite_diff_gradcheck(cum, params, 1e-3)
        parsed = json.loads(json.dumps(report))
        assert parsed["eps"] == pytest.approx(1e-3)

    def test_csv_layout(self, rng):
        _, params, cum = _random_plain_instance(rng, B=1, T=6, K=2, C=2)
        text = gradcheck_report_csv(finite_diff_gradcheck(cum, params, 1e-3))
        lines = text.strip().splitlines()
        assert lines[0] == CSV_HEADER
        assert lines[1] == "tensor,elements,cosine,norm_max_err"
        assert lines[2].split(",")[0] == "cum_scores"
        assert len(lines) == 2 + 3


class TestBackendEquivalence:
    def test_small_campaign_clean(self):
        report = backend_equivalence(30, max_T=6, max_K=3, max_C=3, seed=11)
        assert report["all_pass"] is True
        assert report["failures"] == []
        assert report["trials"] == 30
        assert report["enumerated"] > 0
        assert report["max_rel_logZ"] <= 1e-10

    def test_medium_campaign_clean(self):
        report = backend_equivalence(12, max_T=48, max_K=6, max_C=4, seed=3)
        assert report["all_pass"] is True
        assert report["max_rel_logZ"] <= 1e-9
        assert report["max_grad_diff"] <= 1e-8
        # instances beyond the enumeration guard are checked dense-vs-streaming only
        assert report["enumerated"] < report["trials"]

    def test_rows_carry_replay_coordinates(self):
        report = backend_equivalence(6, max_T=8, max_K=3, max_C=3, seed=5)
        assert len(report["rows"]) == 6
        for row in report["rows"]:
            for key in ("trial", "seed", "T", "K", "C", "B", "mode", "ragged", "projections"):
                assert key in row, key
        json.dumps(report)  # whole report must be serializable

    def test_instance_replay_is_bit_exact(self):
        a_batch, a_params, a_cum = equivalence_instance(
            9, T=7, K=3, C=3, B=2, mode=CenteringMode.MEAN, ragged=True
        )
        b_batch, b_params, b_cum = equivalence_instance(
            9, T=7, K=3, C=3, B=2, mode=CenteringMode.MEAN, ragged=True
        )
        assert np.array_equal(a_batch.emissions, b_batch.emissions)
        assert np.array_equal(a_batch.lengths, b_batch.lengths)
        assert np.array_equal(a_params.transition, b_params.transition)
        assert np.array_equal(a_cum.S, b_cum.S)

    def test_instance_distributions_pinned(self):
        batch, params, _ = equivalence_instance(2, T=50, K=4, C=4, B=2)
        assert np.abs(batch.emissions).max() <= 2.0
        assert np.abs(params.transition).max() <= 1.0
        assert np.abs(params.duration_bias).max() <= 0.5


class TestTrainingDemo:
    CFG = {"B": 2, "T": 40, "C": 4, "K": 4, "seed": 6}

    def test_zero_epochs_identical_initial(self):
        report = training_convergence_demo(self.CFG, epochs=0)
        dense = report["backends"]["dense"]["curve"]
        stream = report["backends"]["streaming"]["curve"]
        assert len(dense) == len(stream) == 1
        assert report["final_rel_diff"] < 1e-9

    def test_backends_track_each_other_and_learn(self):
        report = training_convergence_demo(self.CFG, epochs=8)
        dense = report["backends"]["dense"]
        stream = report["backends"]["streaming"]
        assert report["final_rel_diff"] < 1e-9
        assert report["curve_cosine"] >= 0.999999
        assert dense["curve"][-1] < dense["curve"][0]
        assert len(stream["curve"]) == 9
        assert dense["diverged"] is False

    def test_convex_subproblem_non_increasing(self):
        cfg = dict(self.CFG, lr=0.01, train_emissions=False)
        report = training_convergence_demo(cfg, epochs=12, backends=("dense",))
        curve = np.array(report["backends"]["dense"]["curve"])
        assert np.all(np.diff(curve) <= 1e-12)

    def test_divergence_reported_and_run_continues(self):
        # a sign-flipped learning rate ascends the loss every epoch — the
        # detector must flag it at the fifth straight increase and keep going
        cfg = dict(self.CFG, lr=-0.05)
        report = training_convergence_demo(cfg, epochs=10, backends=("dense",))
        dense = report["backends"]["dense"]
        assert dense["diverged"] is True
        assert dense["diverged_at"] == 4
        assert len(dense["curve"]) == 11  # kept going after the report

    def test_loss_gradients_match_finite_differences(self):
        batch, params, golds = _training_fixture(B=1, T=12, C=3, K=3, seed=4)
        nll, grad_e, grad_T, grad_B = training_loss_and_grads(batch, params, golds, "dense")
        s_nll, s_grad_e, *_ = training_loss_and_grads(batch, params, golds, "streaming")
        assert abs(nll - s_nll) <= 1e-9 * max(1.0, abs(nll))
        assert np.max(np.abs(grad_e - s_grad_e)) <= 1e-9
        eps = 1e-5
        for (u, c) in [(0, 0), (5, 2), (11, 1)]:
            for arr, g in ((batch.emissions, grad_e),):
                plus = arr.copy()
                plus[0, u, c] += eps
                minus = arr.copy()
                minus[0, u, c] -= eps
                f_plus = training_loss_and_grads(
                    EmissionBatch(plus, batch.lengths), params, golds, "dense")[0]
                f_minus = training_loss_and_grads(
                    EmissionBatch(minus, batch.lengths), params, golds, "dense")[0]
                numeric = (f_plus - f_minus) / (2 * eps)
                assert numeric == pytest.approx(g[0, u, c], abs=2e-5)

    def test_curves_csv_layout(self):
        report = training_convergence_demo(self.CFG, epochs=3)
        lines = training_curves_csv(report).strip().splitlines()
        assert lines[0] == CSV_HEADER
        assert lines[1] == "epoch,dense,streaming"
        assert len(lines) == 2 + 4


# --- helpers ---------------------------------------------------------------


def _zero_params(K, C):
    from streamcrf.potentials import SemiCRFParams

    return SemiCRFParams(np.zeros((C, C)), np.zeros((K, C)))


def _random_plain_instance(rng, B, T, K, C):
    from streamcrf.potentials import SemiCRFParams

    batch = EmissionBatch(rng.uniform(-2, 2, (B, T, C)), np.full(B, T))
    params = SemiCRFParams(rng.uniform(-1, 1, (C, C)), rng.uniform(-0.5, 0.5, (K, C)))
    return batch, params, build_scores(batch, params, CenteringMode.NONE)


def _random_projection_instance(rng, T, K, C):
    from streamcrf.potentials import SemiCRFParams

    batch = EmissionBatch(rng.uniform(-2, 2, (1, T, C)), np.array([T]))
    params = SemiCRFParams(rng.uniform(-1, 1, (C, C)), rng.uniform(-0.5, 0.5, (K, C)))
    cum = build_scores(
        batch,
        params,
        CenteringMode.NONE,
        proj_start=rng.uniform(-0.5, 0.5, (1, T, C)),
        proj_end=rng.uniform(-0.5, 0.5, (1, T, C)),
    )
    return batch, params, cum


def _training_fixture(B, T, C, K, seed):
    from streamcrf.datagen import generate_imbalanced
    from streamcrf.potentials import SemiCRFParams

    seqs, golds = [], []
    for b in range(B):
        batch_b, gold_b = generate_imbalanced(
            T, C, (1.0 / C,) * C, 1.0, seed=[seed, b], max_duration=K
        )
        seqs.append(batch_b.emissions[0])
        golds.append(gold_b)
    batch = EmissionBatch(np.stack(seqs), np.full(B, T))
    params = SemiCRFParams(np.zeros((C, C)), np.zeros((K, C)))
    return batch, params, golds
