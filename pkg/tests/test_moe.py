"""Routing tests: the top-k softmax gate, expert compositions over shared
blocks, and sparse-versus-dense mixture agreement."""

import numpy as np
import pytest

from motionmoe import autodiff as ad
from motionmoe.moe import (EXPERT_KINDS, GateDecision, RouterParams,
                           expert_forward, gate, init_router,
                           moe_layer_forward)
from motionmoe.ssm import init_bi_block


def make_router(logit_rows, k):
    """Router rigged so the gate logits equal the given rows exactly: zero
    weight matrix, bias = logits, constant zero features."""
    rows = np.asarray(logit_rows, dtype=np.float64)
    n = rows.shape[1]
    return RouterParams(
        gate_weight=ad.Tensor(np.zeros((3, n)), requires_grad=True),
        gate_bias=ad.Tensor(rows[0].copy(), requires_grad=True),
        k=k,
    )


def rigged_gate(logit_rows, k):
    rows = np.asarray(logit_rows, dtype=np.float64)
    router = make_router(rows, k)
    out = []
    for row in rows:
        router.gate_bias.data[:] = row
        out.append(gate(router, ad.Tensor(np.zeros((1, 3, 2)))))
    return out


class TestGate:
    def test_frozen_two_of_four_example(self):
        (decision,) = rigged_gate([[2.0, 1.0, 0.0, -1.0]], k=2)
        np.testing.assert_array_equal(decision.kept, [[0, 1]])
        np.testing.assert_allclose(
            decision.weights.data,
            [[0.73105858, 0.26894142, 0.0, 0.0]], atol=1e-8)

    def test_ties_keep_lowest_index(self):
        (decision,) = rigged_gate([[1.0, 3.0, 3.0, 3.0]], k=2)
        np.testing.assert_array_equal(decision.kept, [[1, 2]])
        assert decision.weights.data[0, 3] == 0.0

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_weight_laws(self, k):
        rng = np.random.default_rng(k)
        rows = rng.standard_normal((6, 4))
        decisions = rigged_gate(rows, k)
        for row, decision in zip(rows, decisions):
            w = decision.weights.data[0]
            assert (w == 0.0).sum() == 4 - k
            assert w.sum() == pytest.approx(1.0, abs=1e-6)
            assert decision.kept.shape == (1, k)
            # kept indices are exactly the nonzero columns
            np.testing.assert_array_equal(np.flatnonzero(w != 0.0), decision.kept[0])

    def test_keep_all_matches_plain_softmax(self):
        rng = np.random.default_rng(9)
        rows = rng.standard_normal((5, 4))
        decisions = rigged_gate(rows, k=4)
        for row, decision in zip(rows, decisions):
            expected = np.exp(row - row.max())
            expected /= expected.sum()
            np.testing.assert_allclose(decision.weights.data[0], expected, atol=1e-12)

    def test_constant_logit_shift_is_invariant(self):
        rng = np.random.default_rng(11)
        rows = rng.standard_normal((4, 4))
        for shift in (-50.0, 3.0, 200.0):
            base = rigged_gate(rows, k=2)
            moved = rigged_gate(rows + shift, k=2)
            for d0, d1 in zip(base, moved):
                np.testing.assert_array_equal(d0.kept, d1.kept)
                assert np.abs(d0.weights.data - d1.weights.data).max() < 1e-9

    def test_gradient_reaches_gate_parameters(self):
        rng = np.random.default_rng(1)
        router = init_router(rng, pose_dim=5, n_experts=4, k=2)
        features = ad.Tensor(rng.standard_normal((3, 5, 7)), requires_grad=True)
        with ad.Tape():
            decision = gate(router, features)
            grads = ad.backward(ad.reduce_sum(ad.mul(decision.weights,
                                                     ad.Tensor(rng.standard_normal((3, 4))))))
        assert router.gate_weight in grads
        assert router.gate_bias in grads
        assert features in grads

    def test_k_out_of_range_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="outside"):
            init_router(rng, pose_dim=4, n_experts=4, k=5)
        with pytest.raises(ValueError, match="outside"):
            init_router(rng, pose_dim=4, n_experts=4, k=0)

    def test_report_lines(self):
        (decision,) = rigged_gate([[2.0, 1.0, 0.0, -1.0]], k=2)
        (line,) = decision.to_lines(sample_offset=7, layer=2)
        assert line.startswith("sample=7 layer=2 logits=2.000000,")
        assert "kept=0,1" in line and "weights=0.731059," in line


class TestExperts:
    @pytest.fixture()
    def shared_blocks(self):
        rng = np.random.default_rng(0)
        d, t = 6, 8
        shared_s = init_bi_block(rng, channels=t, expand=2, state_dim=4, conv_width=3)
        shared_t = init_bi_block(rng, channels=d, expand=2, state_dim=4, conv_width=3)
        return d, t, shared_s, shared_t

    @pytest.mark.parametrize("kind", EXPERT_KINDS)
    def test_every_kind_preserves_shape(self, kind, shared_blocks):
        d, t, shared_s, shared_t = shared_blocks
        x = ad.Tensor(np.random.default_rng(1).standard_normal((3, d, t)))
        assert expert_forward(kind, shared_s, shared_t, x).shape == (3, d, t)

    def test_compositions_are_stage_products(self, shared_blocks):
        d, t, shared_s, shared_t = shared_blocks
        x = ad.Tensor(np.random.default_rng(2).standard_normal((2, d, t)))

        from motionmoe.ssm import bidirectional_forward
        s_out = bidirectional_forward(shared_s, x)
        t_out = ad.transpose(bidirectional_forward(shared_t, ad.transpose(x, 1, 2)), 1, 2)

        st = expert_forward("ST", shared_s, shared_t, x).data
        ts = expert_forward("TS", shared_s, shared_t, x).data
        exp_st = ad.transpose(bidirectional_forward(
            shared_t, ad.transpose(s_out, 1, 2)), 1, 2).data
        exp_ts = bidirectional_forward(shared_s, t_out).data
        np.testing.assert_array_equal(st, exp_st)
        np.testing.assert_array_equal(ts, exp_ts)

    def test_unknown_kind_rejected(self, shared_blocks):
        d, t, shared_s, shared_t = shared_blocks
        with pytest.raises(ValueError, match="expert kind"):
            expert_forward("XX", shared_s, shared_t, ad.Tensor(np.zeros((1, d, t))))


class TestMixture:
    def make_layer(self, seed, d=5, t=6, k=4, pool=EXPERT_KINDS):
        rng = np.random.default_rng(seed)
        router = init_router(rng, d, len(pool), k)
        shared_s = init_bi_block(rng, channels=t, expand=2, state_dim=3, conv_width=2)
        shared_t = init_bi_block(rng, channels=d, expand=2, state_dim=3, conv_width=2)
        return router, shared_s, shared_t, pool

    def test_dense_mixture_matches_manual_sum(self):
        router, shared_s, shared_t, pool = self.make_layer(0)
        x = ad.Tensor(np.random.default_rng(1).standard_normal((3, 5, 6)))
        out, decision = moe_layer_forward(router, shared_s, shared_t, pool, x)
        expected = np.zeros_like(out.data)
        for e, kind in enumerate(pool):
            expert = expert_forward(kind, shared_s, shared_t, x).data
            expected += decision.weights.data[:, e][:, None, None] * expert
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_sparse_equals_dense_with_masked_weights(self, k):
        router, shared_s, shared_t, pool = self.make_layer(2, k=k)
        x = ad.Tensor(np.random.default_rng(3).standard_normal((4, 5, 6)))
        out, decision = moe_layer_forward(router, shared_s, shared_t, pool, x)
        dense = np.zeros_like(out.data)
        for e, kind in enumerate(pool):
            col = decision.weights.data[:, e]
            if not col.any():
                continue
            expert = expert_forward(kind, shared_s, shared_t, x).data
            dense += col[:, None, None] * expert
        np.testing.assert_allclose(out.data, dense, atol=1e-12)

    def test_homogeneous_pool_collapses_to_one_expert(self):
        router, shared_s, shared_t, _ = self.make_layer(4, k=4)
        x = ad.Tensor(np.random.default_rng(5).standard_normal((2, 5, 6)))
        out, decision = moe_layer_forward(router, shared_s, shared_t,
                                          ("ST", "ST", "ST", "ST"), x)
        single = expert_forward("ST", shared_s, shared_t, x).data
        # weights sum to 1, so N copies of one expert reduce to that expert
        np.testing.assert_allclose(out.data, single, atol=1e-12)
        assert decision.weights.data.sum(axis=1) == pytest.approx(1.0, abs=1e-12)

    def test_dropped_experts_get_no_gate_gradient(self):
        # k=2 of 4 (with k=1 even the kept weight is the constant 1 and every
        # gate gradient vanishes); distinct per-expert coefficients stand in
        # for distinct expert outputs
        router = make_router([[2.0, 1.0, 0.0, -1.0]], k=2)
        coeffs = ad.Tensor(np.array([[3.0, -1.0, 2.0, 5.0]]))
        with ad.Tape():
            decision = gate(router, ad.Tensor(np.zeros((1, 3, 2))))
            grads = ad.backward(ad.reduce_sum(ad.mul(decision.weights, coeffs)))
        gb = grads[router.gate_bias].data
        np.testing.assert_array_equal(decision.kept, [[0, 1]])
        assert gb[0] != 0.0 and gb[1] != 0.0
        assert gb[2] == 0.0 and gb[3] == 0.0

    def test_pool_router_width_mismatch(self):
        router, shared_s, shared_t, _ = self.make_layer(8)
        with pytest.raises(ad.ShapeError, match="pool"):
            moe_layer_forward(router, shared_s, shared_t, ("ST", "TT"),
                              ad.Tensor(np.zeros((1, 5, 6))))
