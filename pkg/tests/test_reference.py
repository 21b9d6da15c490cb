"""Dense oracle backend: enumeration, forward-backward, marginals, Viterbi.

The frozen numbers come from paths counted by hand: a T=4, K=2 sequence has
compositions {1111, 112, 121, 211, 22}, giving 16 + 24 + 4 = 44 labeled
segmentations at C=2, times 2 virtual-source labels -> ln 88. Tie-break traces
were worked out by hand before dense_viterbi existed.
"""

import math

import numpy as np
import pytest

from streamcrf._numerics import logsumexp
from streamcrf.potentials import (
    CenteringMode,
    EmissionBatch,
    Segmentation,
    SemiCRFParams,
    build_scores,
    segment_path_score,
)
from streamcrf.reference import (
    DenseMessages,
    GuardExceeded,
    dense_backward_marginals,
    dense_forward,
    dense_viterbi,
    enumerate_logZ,
    enumerate_viterbi_score,
    flow_conservation_residual,
)

from conftest import cum_from_centered, random_instance, zero_params


def random_small(rng, trial):
    """Guard-sized instance with dims + flavour cycling by trial index."""
    T = int(rng.integers(1, 7))
    K = int(rng.integers(1, 4))
    C = int(rng.integers(1, 4))
    mode = list(CenteringMode)[trial % 3]
    return random_instance(
        rng,
        B=1,
        T=T,
        K=K,
        C=C,
        mode=mode,
        projections=(trial % 4 == 1),
        scalar_boundaries=(trial % 5 == 2),
    )


class TestEnumerate:
    def test_single_path_is_zero(self):
        cum = cum_from_centered(np.zeros((1, 1)))
        assert enumerate_logZ(cum, zero_params(1, 1), 0) == pytest.approx(0.0, abs=1e-12)

    def test_one_position_two_labels(self):
        cum = cum_from_centered(np.zeros((1, 2)))
        val = enumerate_logZ(cum, zero_params(1, 2), 0)
        assert val == pytest.approx(math.log(4.0), abs=1e-12)

    def test_composition_count_t4_k2_c2(self):
        cum = cum_from_centered(np.zeros((4, 2)))
        val = enumerate_logZ(cum, zero_params(2, 2), 0)
        assert val == pytest.approx(math.log(88.0), abs=1e-12)

    def test_guard_refuses_long_sequences(self):
        cum = cum_from_centered(np.zeros((13, 2)))
        with pytest.raises(GuardExceeded):
            enumerate_logZ(cum, zero_params(2, 2), 0)

    def test_guard_refuses_large_k_or_c(self):
        cum = cum_from_centered(np.zeros((4, 2)))
        with pytest.raises(GuardExceeded):
            enumerate_logZ(cum, zero_params(5, 2), 0)
        cum5 = cum_from_centered(np.zeros((4, 5)))
        with pytest.raises(GuardExceeded):
            enumerate_logZ(cum5, zero_params(2, 5), 0)


class TestDenseForward:
    def test_one_position_two_labels(self):
        cum = cum_from_centered(np.zeros((1, 2)))
        msgs = dense_forward(cum, zero_params(1, 2))
        assert msgs.logZ[0] == pytest.approx(math.log(4.0), abs=1e-12)

    def test_message_boundary_conventions(self, rng):
        _, params, cum = random_instance(rng, B=3, T=7, K=3, C=2, ragged=True)
        msgs = dense_forward(cum, params)
        assert np.all(msgs.alpha[:, 0, :] == 0.0)
        dense_backward_marginals(cum, params, msgs)
        for b in range(3):
            assert np.all(msgs.beta[b, int(cum.lengths[b]), :] == 0.0)

    def test_matches_enumeration(self, rng):
        for trial in range(200):
            _, params, cum = random_small(rng, trial)
            got = dense_forward(cum, params).logZ[0]
            want = enumerate_logZ(cum, params, 0)
            rel = abs(got - want) / max(1.0, abs(want))
            assert rel <= 1e-10, (trial, cum.S.shape, params.max_duration, rel)

    def test_logz_monotone_in_potentials(self, rng):
        _, params, cum = random_instance(rng, B=1, T=6, K=3, C=3)
        base = dense_forward(cum, params).logZ[0]
        for k, c in ((0, 0), (2, 1)):
            bumped = params.duration_bias.copy()
            bumped[k, c] += 0.7
            up = dense_forward(cum, SemiCRFParams(params.transition, bumped)).logZ[0]
            assert up >= base - 1e-12
        trans = params.transition.copy()
        trans[1, 2] += 1.3
        up = dense_forward(cum, SemiCRFParams(trans, params.duration_bias)).logZ[0]
        assert up >= base - 1e-12

    def test_ragged_rows_ignore_padding(self, rng):
        # A ragged row must score identically to the same data in a tight batch.
        emissions = rng.uniform(-2, 2, size=(2, 8, 3))
        lengths = np.array([5, 8])
        _, params, _ = random_instance(rng, B=1, T=8, K=3, C=3)
        cum_wide = build_scores(EmissionBatch(emissions, lengths), params)
        cum_tight = build_scores(
            EmissionBatch(emissions[:1, :5].copy(), np.array([5])), params
        )
        wide = dense_forward(cum_wide, params).logZ[0]
        tight = dense_forward(cum_tight, params).logZ[0]
        assert wide == pytest.approx(tight, abs=1e-12)


class TestFlowConservation:
    def test_cut_identity_holds_at_every_boundary(self, rng):
        for trial in range(40):
            _, params, cum = random_small(rng, trial)
            msgs = dense_forward(cum, params)
            dense_backward_marginals(cum, params, msgs)
            residual = flow_conservation_residual(msgs, cum, params)
            assert residual[0] <= 1e-8, (trial, residual)

    def test_cut_identity_on_ragged_batch(self, rng):
        _, params, cum = random_instance(rng, B=4, T=9, K=3, C=3, ragged=True)
        msgs = dense_forward(cum, params)
        dense_backward_marginals(cum, params, msgs)
        assert flow_conservation_residual(msgs, cum, params).max() <= 1e-8

    def test_literal_product_form_at_sequence_ends(self, rng):
        for trial in range(20):
            _, params, cum = random_small(rng, trial)
            msgs = dense_forward(cum, params)
            dense_backward_marginals(cum, params, msgs)
            L = int(cum.lengths[0])
            for t in (0, L):
                mass = logsumexp(msgs.alpha[0, t] + msgs.beta[0, t], axis=0)
                assert mass == pytest.approx(msgs.logZ[0], abs=1e-8)

    def test_literal_product_form_everywhere_when_k_is_one(self, rng):
        _, params, cum = random_instance(rng, B=1, T=9, K=1, C=3)
        msgs = dense_forward(cum, params)
        dense_backward_marginals(cum, params, msgs)
        for t in range(10):
            mass = logsumexp(msgs.alpha[0, t] + msgs.beta[0, t], axis=0)
            assert mass == pytest.approx(msgs.logZ[0], abs=1e-8)

    def test_interior_product_form_misses_crossing_segments(self):
        # With K=2 the one-segment path [0,2) has no boundary at t=1, so the
        # plain alpha+beta product at t=1 accounts for only one of the two
        # paths; the cut form picks up the crossing segment. This pins down
        # why the residual helper sums crossing-segment mass.
        cum = cum_from_centered(np.zeros((2, 1)))
        params = zero_params(2, 1)
        msgs = dense_forward(cum, params)
        dense_backward_marginals(cum, params, msgs)
        assert msgs.logZ[0] == pytest.approx(math.log(2.0), abs=1e-12)
        interior = logsumexp(msgs.alpha[0, 1] + msgs.beta[0, 1], axis=0)
        assert interior == pytest.approx(0.0, abs=1e-12)  # one path, not two
        assert flow_conservation_residual(msgs, cum, params)[0] <= 1e-12


class TestDenseBackward:
    def _run(self, cum, params):
        msgs = dense_forward(cum, params)
        mu, grads = dense_backward_marginals(cum, params, msgs)
        return msgs, mu, grads

    def test_single_path_marginal_is_one(self):
        cum = cum_from_centered(np.zeros((1, 1)))
        params = zero_params(1, 1)
        msgs, mu, grads = self._run(cum, params)
        assert mu[0, 1, 0, 0, 0] == 1.0
        assert mu.sum() == pytest.approx(1.0, abs=1e-12)
        assert grads.grad_B[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert grads.grad_T[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_marginals_live_in_unit_interval(self, rng):
        for trial in range(30):
            _, params, cum = random_small(rng, trial)
            _, mu, _ = self._run(cum, params)
            assert mu.min() >= 0.0
            assert mu.max() <= 1.0

    def test_total_mass_is_expected_segment_count(self, rng):
        for trial in range(30):
            _, params, cum = random_small(rng, trial)
            count = self._run(cum, params)[1].sum()
            L = int(cum.lengths[0])
            assert 1.0 - 1e-9 <= count <= L + 1e-9, (trial, count, L)

    def test_invalid_cells_stay_zero(self, rng):
        _, params, cum = random_instance(rng, B=2, T=6, K=3, C=2, ragged=True)
        _, mu, _ = self._run(cum, params)
        K = params.max_duration
        for b in range(2):
            L = int(cum.lengths[b])
            assert np.all(mu[b, 0] == 0.0)  # no segment ends at boundary 0
            assert np.all(mu[b, L + 1 :] == 0.0)
            for t in range(1, L + 1):
                for k in range(1, K + 1):
                    if k > t:
                        assert np.all(mu[b, t, k - 1] == 0.0)

    def test_grad_s_sums_to_zero_per_sequence(self, rng):
        for trial in range(20):
            B = 1 + trial % 3
            _, params, cum = random_instance(
                rng, B=B, T=7, K=3, C=3, ragged=(B > 1), projections=(trial % 2 == 0)
            )
            grads = self._run(cum, params)[2]
            per_seq = grads.grad_S.sum(axis=(1, 2))
            np.testing.assert_allclose(per_seq, 0.0, atol=1e-6)

    def test_grad_b_total_is_expected_segment_count(self, rng):
        for trial in range(20):
            _, params, cum = random_small(rng, trial)
            _, mu, grads = self._run(cum, params)
            assert grads.grad_B.sum() == pytest.approx(mu.sum(), abs=1e-6)

    def test_gradients_match_central_differences(self, rng):
        _, params, cum = random_instance(rng, B=1, T=8, K=3, C=3, projections=True)
        grads = self._run(cum, params)[2]
        eps = 1e-5

        def logz_with(cum2, params2):
            return dense_forward(cum2, params2).logZ[0]

        from dataclasses import replace

        pairs = []  # (analytic, numeric)
        for t in range(cum.S.shape[1]):
            for c in range(cum.num_labels):
                for sign in (1,):
                    Sp, Sm = cum.S.copy(), cum.S.copy()
                    Sp[0, t, c] += eps
                    Sm[0, t, c] -= eps
                    num = (
                        logz_with(replace(cum, S=Sp), params)
                        - logz_with(replace(cum, S=Sm), params)
                    ) / (2 * eps)
                    pairs.append((grads.grad_S[0, t, c], num))
        for i in range(params.num_labels):
            for j in range(params.num_labels):
                Tp, Tm = params.transition.copy(), params.transition.copy()
                Tp[i, j] += eps
                Tm[i, j] -= eps
                num = (
                    logz_with(cum, SemiCRFParams(Tp, params.duration_bias))
                    - logz_with(cum, SemiCRFParams(Tm, params.duration_bias))
                ) / (2 * eps)
                pairs.append((grads.grad_T[i, j], num))
        for k in range(params.max_duration):
            for c in range(params.num_labels):
                Bp, Bm = params.duration_bias.copy(), params.duration_bias.copy()
                Bp[k, c] += eps
                Bm[k, c] -= eps
                num = (
                    logz_with(cum, SemiCRFParams(params.transition, Bp))
                    - logz_with(cum, SemiCRFParams(params.transition, Bm))
                ) / (2 * eps)
                pairs.append((grads.grad_B[k, c], num))
        for arr, grad in (("proj_start", grads.grad_P_start), ("proj_end", grads.grad_P_end)):
            base = getattr(cum, arr)
            for t in range(cum.max_length):
                for c in range(cum.num_labels):
                    Pp, Pm = base.copy(), base.copy()
                    Pp[0, t, c] += eps
                    Pm[0, t, c] -= eps
                    num = (
                        logz_with(replace(cum, **{arr: Pp}), params)
                        - logz_with(replace(cum, **{arr: Pm}), params)
                    ) / (2 * eps)
                    pairs.append((grad[0, t, c], num))

        ana = np.array([p[0] for p in pairs])
        num = np.array([p[1] for p in pairs])
        cosine = float(ana @ num / max(np.linalg.norm(ana) * np.linalg.norm(num), 1e-300))
        assert cosine >= 0.9999
        np.testing.assert_allclose(ana, num, atol=5e-7)


class TestDenseViterbi:
    def test_zero_params_tie_break(self):
        # Ties resolve to the longest duration, then the smallest source
        # label; with everything zero over T=5, K=2 that forces k=1 at t=1
        # (nothing longer exists) and k=2 afterwards.
        cum = cum_from_centered(np.zeros((5, 2)))
        seg, score = dense_viterbi(cum, zero_params(2, 2), 0)
        assert seg.segments == ((0, 1, 0), (1, 3, 0), (3, 5, 0))
        assert score == pytest.approx(0.0, abs=1e-12)

    def test_matches_enumeration_score(self, rng):
        for trial in range(120):
            _, params, cum = random_small(rng, trial)
            seg, score = dense_viterbi(cum, params, 0)
            seg.validate(int(cum.lengths[0]), params.max_duration, params.num_labels)
            want = enumerate_viterbi_score(cum, params, 0)
            assert score == pytest.approx(want, abs=1e-10), trial
            # reported score is the max-over-source path score of the result
            best = segment_path_score(cum, params, seg, 0).max()
            assert score == pytest.approx(best, abs=1e-10)

    def test_emissions_force_boundary(self):
        # Label 1 dominates [0, 3), label 0 dominates [3, 5); label switches
        # other than the forced one are penalized. Same-label tilings of each
        # block tie, and the longest-duration tie-break collapses them.
        emissions = np.zeros((5, 2))
        emissions[:3, 1] = 5.0
        emissions[:3, 0] = -5.0
        emissions[3:, 0] = 5.0
        emissions[3:, 1] = -5.0
        cum = cum_from_centered(emissions)
        params = SemiCRFParams(np.array([[0.0, -2.0], [-2.0, 0.0]]), np.zeros((4, 2)))
        seg, score = dense_viterbi(cum, params, 0)
        assert seg.segments == ((0, 3, 1), (3, 5, 0))
        assert score == pytest.approx(23.0, abs=1e-12)
        assert score == pytest.approx(enumerate_viterbi_score(cum, params, 0), abs=1e-12)

    def test_score_never_exceeds_logz(self, rng):
        for trial in range(25):
            _, params, cum = random_small(rng, trial)
            _, score = dense_viterbi(cum, params, 0)
            assert score <= dense_forward(cum, params).logZ[0] + 1e-10

    def test_shared_max_leaves_decode_unchanged(self, rng):
        for _ in range(15):
            batch, params, _ = random_instance(rng, B=1, T=8, K=3, C=3)
            cum_none = build_scores(batch, params, CenteringMode.NONE)
            cum_max = build_scores(batch, params, CenteringMode.SHARED_MAX)
            seg_n, score_n = dense_viterbi(cum_none, params, 0)
            seg_m, score_m = dense_viterbi(cum_max, params, 0)
            assert seg_n.segments == seg_m.segments
            # every tiling covers each position once, so the scores differ by
            # exactly the summed per-position shift
            shift = batch.emissions[0].max(axis=1).sum()
            assert score_n - score_m == pytest.approx(shift, abs=1e-9)


class TestDenseGuard:
    def test_oversized_instances_refused(self, rng, monkeypatch):
        monkeypatch.setenv("STREAMCRF_GUARD_BYTES", "4096")
        _, params, cum = random_instance(rng, B=2, T=20, K=4, C=3)
        with pytest.raises(GuardExceeded, match="streaming"):
            dense_forward(cum, params)
        with pytest.raises(GuardExceeded, match="STREAMCRF_GUARD_BYTES"):
            dense_viterbi(cum, params, 0)

    def test_env_override_admits_more(self, rng, monkeypatch):
        _, params, cum = random_instance(rng, B=1, T=6, K=2, C=2)
        monkeypatch.setenv("STREAMCRF_GUARD_BYTES", str(1 << 40))
        assert np.isfinite(dense_forward(cum, params).logZ).all()

    def test_default_guard_admits_working_sizes(self, rng, monkeypatch):
        monkeypatch.delenv("STREAMCRF_GUARD_BYTES", raising=False)
        _, params, cum = random_instance(rng, B=1, T=12, K=3, C=3)
        assert np.isfinite(dense_forward(cum, params).logZ).all()
