"""Tests for the contrastive loss family and its decomposition."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sce import autodiff as ad
from sce import objectives as obj
from sce.autodiff import Tape, Tensor


def unit_rows(seed, n, d, dtype=np.float64):
    return obj.random_unit_rows(np.random.default_rng(seed), n, d, dtype)


def masked_softmax_oracle(logits, tau, mask=None):
    """Brute-force f64 double-loop softmax with exclusion mask."""
    logits = np.asarray(logits, dtype=np.float64)
    n, k = logits.shape
    out = np.zeros((n, k))
    for i in range(n):
        total = 0.0
        for j in range(k):
            if mask is not None and mask[i, j]:
                continue
            total += np.exp(logits[i, j] / tau)
        for j in range(k):
            if mask is not None and mask[i, j]:
                continue
            out[i, j] = np.exp(logits[i, j] / tau) / total
    return out


class TestObjectiveConfig:
    def test_defaults(self):
        cfg = obj.ObjectiveConfig()
        assert cfg.lam == 0.5
        assert cfg.tau == 0.1
        assert cfg.tau_m == 0.05
        assert cfg.tau_m < cfg.tau
        assert cfg.mu_eff == 0.5 and cfg.eta_eff == 0.5

    def test_mu_eta_track_lam(self):
        cfg = obj.ObjectiveConfig(lam=0.3)
        assert abs(cfg.mu_eff - 0.7) < 1e-12
        assert abs(cfg.eta_eff - 0.7) < 1e-12
        cfg2 = obj.ObjectiveConfig(lam=0.3, mu=1.0, eta=0.0)
        assert cfg2.mu_eff == 1.0 and cfg2.eta_eff == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            obj.ObjectiveConfig(lam=1.5)
        with pytest.raises(ValueError):
            obj.ObjectiveConfig(tau=0.0)
        with pytest.raises(ValueError):
            obj.ObjectiveConfig(tau_m=-0.1)
        with pytest.raises(ValueError):
            obj.ObjectiveConfig(mu=-1.0)


class TestSimilarityLogits:
    def test_self_similarity_all_ones(self):
        z = unit_rows(0, 4, 8)
        block = obj.similarity_logits(z, z, unit_rows(1, 3, 8))
        np.testing.assert_allclose(block.pos.data, np.ones(4), atol=1e-6)

    def test_orthogonal_queue_zero_negatives(self):
        a = np.eye(4)[:2]  # rows e0, e1
        queue = np.eye(4)[2:]  # rows e2, e3
        block = obj.similarity_logits(a, a, queue)
        np.testing.assert_allclose(block.neg.data, np.zeros((2, 2)), atol=1e-12)

    def test_matches_double_loop(self):
        a = unit_rows(2, 3, 5)
        b = unit_rows(3, 3, 5)
        q = unit_rows(4, 4, 5)
        block = obj.similarity_logits(a, b, q)
        for i in range(3):
            assert abs(block.pos.data[i] - np.dot(a[i], b[i])) < 1e-6
            for j in range(4):
                assert abs(block.neg.data[i, j] - np.dot(a[i], q[j])) < 1e-6

    def test_dim_mismatch(self):
        with pytest.raises(ad.ShapeError):
            obj.similarity_logits(unit_rows(0, 2, 4), unit_rows(1, 2, 4),
                                  unit_rows(2, 3, 5))

    def test_logits_bounded_for_unit_inputs(self):
        block = obj.similarity_logits(unit_rows(5, 8, 16), unit_rows(6, 8, 16),
                                      unit_rows(7, 32, 16))
        assert np.all(np.abs(block.pos.data) <= 1 + 1e-5)
        assert np.all(np.abs(block.neg.data) <= 1 + 1e-5)


class TestInfoNCE:
    def test_uniform_candidates(self):
        pos = Tensor(np.zeros(2), dtype=None)
        neg = Tensor(np.zeros((2, 3)), dtype=None)
        out = obj.info_nce_loss(obj.LogitsBlock(pos, neg), tau=1.0)
        np.testing.assert_allclose(float(out.data), np.log(4.0), atol=1e-6)

    def test_scalar_evaluation(self):
        pos = Tensor(np.array([1.0]), dtype=None)
        neg = Tensor(np.array([[0.0]]), dtype=None)
        out = obj.info_nce_loss(obj.LogitsBlock(pos, neg), tau=1.0)
        expected = -np.log(np.e / (np.e + 1.0))
        np.testing.assert_allclose(float(out.data), expected, atol=1e-6)
        np.testing.assert_allclose(float(out.data), 0.3133, atol=1e-4)

    def test_monotone_in_positive(self):
        neg = Tensor(unit_rows(8, 1, 6) @ unit_rows(9, 4, 6).T, dtype=None)
        values = []
        for p in (0.0, 0.3, 0.6, 0.9):
            block = obj.LogitsBlock(Tensor(np.array([p]), dtype=None), neg)
            values.append(float(obj.info_nce_loss(block, 0.1).data))
        assert all(a > b for a, b in zip(values, values[1:]))


class TestTargetRelations:
    def test_symmetric_queue(self):
        z2 = np.array([[1.0, 0.0]])
        queue = np.array([[0.0, 1.0], [0.0, -1.0]])  # equal similarity 0
        p2 = obj.target_relations(z2, queue, tau_m=0.05)
        np.testing.assert_allclose(p2, [[0.0, 0.5, 0.5]], atol=1e-12)

    def test_sharpening_limit_approaches_one_hot(self):
        z2 = unit_rows(10, 1, 8)
        queue = unit_rows(11, 6, 8)
        p2 = obj.target_relations(z2, queue, tau_m=1e-3)
        sims = z2 @ queue.T
        assert p2[0, 1 + np.argmax(sims[0])] > 0.999

    def test_matches_brute_force(self):
        z2 = unit_rows(12, 5, 8)
        queue = unit_rows(13, 7, 8)
        p2 = obj.target_relations(z2, queue, tau_m=0.05)
        sims = np.concatenate([np.zeros((5, 1)), z2 @ queue.T], axis=1)
        mask = np.zeros((5, 8), dtype=bool)
        mask[:, 0] = True
        np.testing.assert_allclose(p2, masked_softmax_oracle(sims, 0.05, mask),
                                   atol=1e-6)

    def test_unmasked_self_slot_variant(self):
        z2 = unit_rows(14, 3, 8)
        queue = unit_rows(15, 4, 8)
        p2 = obj.target_relations(z2, queue, tau_m=0.05, mask_self=False)
        sims = np.concatenate([np.zeros((3, 1)), z2 @ queue.T], axis=1)
        np.testing.assert_allclose(p2, masked_softmax_oracle(sims, 0.05),
                                   atol=1e-6)
        assert np.all(p2[:, 0] > 0)

    def test_empty_queue_masked_self_degenerate(self):
        with pytest.raises(ad.DegenerateRowError):
            obj.target_relations(unit_rows(16, 2, 4), np.zeros((0, 4)),
                                 tau_m=0.05)

    @given(st.integers(1, 6), st.integers(1, 12), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_row_stochastic(self, n, m, seed):
        z2 = unit_rows(seed, n, 8)
        queue = unit_rows(seed + 1, m, 8)
        p2 = obj.target_relations(z2, queue, tau_m=0.05)
        np.testing.assert_allclose(p2.sum(axis=1), np.ones(n), atol=1e-6)
        assert np.all(p2[:, 0] == 0.0)


class TestOnlineRelations:
    def test_positive_slot_zero(self):
        p1 = obj.online_relations_masked(unit_rows(17, 3, 8), unit_rows(18, 3, 8),
                                         unit_rows(19, 5, 8), tau=0.1)
        assert np.all(p1.data[:, 0] == 0.0)
        np.testing.assert_allclose(p1.data.sum(axis=1), np.ones(3), atol=1e-6)

    def test_mirrors_target_relations(self):
        z1 = unit_rows(20, 4, 8)
        queue = unit_rows(21, 6, 8)
        p1 = obj.online_relations_masked(z1, z1, queue, tau=0.05)
        p2 = obj.target_relations(z1, queue, tau_m=0.05)
        # identical embeddings and temperature: the queue slots agree
        np.testing.assert_allclose(p1.data[:, 1:], p2[:, 1:], atol=1e-6)

    def test_gradient(self):
        z1 = Tensor(unit_rows(22, 3, 6), requires_grad=True, dtype=None)
        z2 = unit_rows(23, 3, 6)
        queue = unit_rows(24, 4, 6)
        c = np.random.default_rng(25).normal(size=(3, 5))

        def f(params):
            p1 = obj.online_relations_masked(params["z1"], z2, queue, 0.1)
            return ad.tsum(ad.mul(p1, Tensor(c, dtype=None)))

        report = ad.grad_check(f, {"z1": z1}, h=1e-5, tol=1e-4)
        assert report["passed"], report


class TestResslLoss:
    def test_equal_distributions_give_entropy(self):
        z = unit_rows(26, 4, 8)
        queue = unit_rows(27, 5, 8)
        p2 = obj.target_relations(z, queue, tau_m=0.1)
        with Tape():
            p1 = obj.online_relations_masked(z, z, queue, tau=0.1)
            loss = obj.ressl_loss(p2, p1)
        entropy = -(p2[:, 1:] * np.log(p2[:, 1:])).sum(axis=1).mean()
        np.testing.assert_allclose(float(loss.data), entropy, atol=1e-5)
        assert float(loss.data) >= 0.0

    def test_one_hot_target_uniform_online(self):
        m = 5
        p2 = np.zeros((1, m + 1))
        p2[0, 2] = 1.0
        p1 = Tensor(np.concatenate([[[0.0]], np.full((1, m), 1.0 / m)], axis=1),
                    dtype=None)
        with Tape():
            loss = obj.ressl_loss(p2, p1)
        np.testing.assert_allclose(float(loss.data), np.log(m), atol=1e-9)

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(28)
        m = 6
        p2 = np.concatenate([np.zeros((4, 1)), rng.dirichlet(np.ones(m), 4)],
                            axis=1)
        p1v = np.concatenate([np.zeros((4, 1)), rng.dirichlet(np.ones(m), 4)],
                             axis=1)
        expected = 0.0
        for i in range(4):
            for k in range(1, m + 1):
                expected -= p2[i, k] * np.log(p1v[i, k])
        expected /= 4
        with Tape():
            loss = obj.ressl_loss(p2, Tensor(p1v, dtype=None))
        np.testing.assert_allclose(float(loss.data), expected, atol=1e-6)

    def test_inconsistent_masks_rejected(self):
        p2 = np.full((1, 3), 1.0 / 3.0)  # mass on slot 0
        p1 = Tensor(np.array([[0.0, 0.5, 0.5]]), dtype=None)
        with pytest.raises(ValueError):
            obj.ressl_loss(p2, p1)


class TestSceTarget:
    def test_lam_one_is_one_hot(self):
        p2 = obj.target_relations(unit_rows(29, 3, 8), unit_rows(30, 4, 8), 0.05)
        w2 = obj.sce_target(p2, 1.0)
        np.testing.assert_allclose(w2[:, 0], np.ones(3))
        np.testing.assert_allclose(w2[:, 1:], np.zeros((3, 4)))

    def test_lam_zero_is_p2(self):
        p2 = obj.target_relations(unit_rows(31, 3, 8), unit_rows(32, 4, 8), 0.05)
        np.testing.assert_allclose(obj.sce_target(p2, 0.0), p2)

    def test_half_mix_arithmetic(self):
        p2 = np.array([[0.0, 0.5, 0.5]])
        np.testing.assert_allclose(obj.sce_target(p2, 0.5),
                                   [[0.5, 0.25, 0.25]])

    def test_rows_sum_exactly_one(self):
        p2 = obj.target_relations(unit_rows(33, 5, 8), unit_rows(34, 9, 8), 0.05)
        for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
            w2 = obj.sce_target(p2, lam)
            np.testing.assert_allclose(w2.sum(axis=1), np.ones(5), atol=1e-12)

    def test_invalid_lam(self):
        with pytest.raises(ValueError):
            obj.sce_target(np.zeros((1, 2)), 1.5)


class TestSceOnlineAndLoss:
    def test_uniform_logits(self):
        with Tape():
            p1 = obj.sce_online(np.eye(4)[:1], np.eye(4)[1:2],
                                np.eye(4)[2:], tau=1.0)
        # pos = 0 and both queue sims are 0: uniform over 3 slots
        np.testing.assert_allclose(p1.data, np.full((1, 3), 1 / 3), atol=1e-9)

    def test_rows_sum_to_one_no_mask(self):
        with Tape():
            p1 = obj.sce_online(unit_rows(35, 4, 8), unit_rows(36, 4, 8),
                                unit_rows(37, 6, 8), tau=0.1)
        np.testing.assert_allclose(p1.data.sum(axis=1), np.ones(4), atol=1e-6)
        assert np.all(p1.data > 0)

    def test_matches_oracle(self):
        z1, z2, q = unit_rows(38, 3, 8), unit_rows(39, 3, 8), unit_rows(40, 5, 8)
        with Tape():
            p1 = obj.sce_online(z1, z2, q, tau=0.1)
        pos = np.einsum("nd,nd->n", z1, z2)[:, None]
        sims = np.concatenate([pos, z1 @ q.T], axis=1)
        np.testing.assert_allclose(p1.data, masked_softmax_oracle(sims, 0.1),
                                   atol=1e-6)

    def test_lam_one_equals_infonce(self):
        z1, z2, q = unit_rows(41, 4, 8), unit_rows(42, 4, 8), unit_rows(43, 6, 8)
        with Tape():
            losses = obj.compute_losses(Tensor(z1, dtype=None), z2, q,
                                        obj.ObjectiveConfig(lam=1.0))
        np.testing.assert_allclose(float(losses["sce"].data),
                                   float(losses["infonce"].data), atol=1e-6)

    def test_w2_equals_p1_gives_entropy(self):
        z1, q = unit_rows(44, 3, 8), unit_rows(45, 5, 8)
        with Tape():
            p1 = obj.sce_online(z1, z1, q, tau=0.1)
            loss = obj.sce_loss(p1.data, p1)
        entropy = -(p1.data * np.log(p1.data)).sum(axis=1).mean()
        np.testing.assert_allclose(float(loss.data), entropy, atol=1e-6)


class TestCeilLoss:
    def test_ratio_of_masses(self):
        pos = Tensor(np.array([0.5]), dtype=None)
        neg = Tensor(np.full((1, 3), 0.5), dtype=None)
        with Tape():
            out = obj.ceil_loss(obj.LogitsBlock(pos, neg), tau=1.0)
        np.testing.assert_allclose(float(out.data), np.log(4.0 / 3.0),
                                   atol=1e-9)
        np.testing.assert_allclose(float(out.data), 0.2877, atol=1e-4)

    def test_monotone_increasing_in_pos(self):
        neg = Tensor(np.zeros((1, 4)), dtype=None)
        values = []
        for p in (0.0, 0.5, 1.0, 2.0):
            block = obj.LogitsBlock(Tensor(np.array([p]), dtype=None), neg)
            with Tape():
                values.append(float(obj.ceil_loss(block, 1.0).data))
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_always_positive(self):
        for seed in range(5):
            block = obj.similarity_logits(unit_rows(seed, 4, 8),
                                          unit_rows(seed + 50, 4, 8),
                                          unit_rows(seed + 100, 6, 8))
            with Tape():
                assert float(obj.ceil_loss(block, 0.1).data) > 0.0

    def test_direct_formula_oracle(self):
        z1, z2, q = unit_rows(46, 4, 8), unit_rows(47, 4, 8), unit_rows(48, 5, 8)
        tau = 0.1
        block = obj.similarity_logits(z1, z2, q)
        with Tape():
            out = obj.ceil_loss(block, tau)
        pos = np.einsum("nd,nd->n", z1, z2).astype(np.float64)
        negs = (z1 @ q.T).astype(np.float64)
        neg_mass = np.exp(negs / tau).sum(axis=1)
        total = np.exp(pos / tau) + neg_mass
        expected = -np.mean(np.log(neg_mass / total))
        np.testing.assert_allclose(float(out.data), expected, atol=1e-6)


class TestCombinedLoss:
    def _instance(self, seed):
        return (unit_rows(seed, 4, 8), unit_rows(seed + 1, 4, 8),
                unit_rows(seed + 2, 6, 8))

    def test_pure_infonce(self):
        z1, z2, q = self._instance(49)
        cfg = obj.ObjectiveConfig(lam=1.0, mu=0.0, eta=0.0)
        with Tape():
            losses = obj.compute_losses(Tensor(z1, dtype=None), z2, q, cfg)
        np.testing.assert_allclose(float(losses["combined"].data),
                                   float(losses["infonce"].data), atol=1e-9)

    def test_pure_ressl(self):
        z1, z2, q = self._instance(52)
        cfg = obj.ObjectiveConfig(lam=0.0, mu=1.0, eta=0.0)
        with Tape():
            losses = obj.compute_losses(Tensor(z1, dtype=None), z2, q, cfg)
        np.testing.assert_allclose(float(losses["combined"].data),
                                   float(losses["ressl"].data), atol=1e-9)

    def test_default_weights_match_sce(self):
        z1, z2, q = self._instance(55)
        for lam in (0.0, 0.3, 0.5, 0.8, 1.0):
            cfg = obj.ObjectiveConfig(lam=lam)
            with Tape():
                losses = obj.compute_losses(Tensor(z1, dtype=None), z2, q, cfg)
            rel = abs(float(losses["combined"].data)
                      - float(losses["sce"].data))
            rel /= max(1.0, abs(float(losses["sce"].data)))
            assert rel <= 1e-5


class TestGradientIsolation:
    def test_only_z1_receives_gradient(self):
        z1 = Tensor(unit_rows(58, 4, 8), requires_grad=True, dtype=None)
        z2 = Tensor(unit_rows(59, 4, 8), requires_grad=True, dtype=None)
        q = Tensor(unit_rows(60, 6, 8), requires_grad=True, dtype=None)
        cfg = obj.ObjectiveConfig()
        for key in ("infonce", "ressl", "ceil", "sce", "combined"):
            z1.zero_grad(), z2.zero_grad(), q.zero_grad()
            with Tape() as tape:
                losses = obj.compute_losses(z1, z2, q, cfg)
            ad.backward(tape, losses[key])
            assert z1.grad is not None, key
            assert z2.grad is None, key
            assert q.grad is None, key


class TestBatchFormulation:
    def test_queue_free_recovery(self):
        # queue-free form: the batch's own target embeddings serve as the
        # relation anchors, with each row's own column excluded
        n, d = 5, 8
        z1 = unit_rows(61, n, d)
        z2 = unit_rows(62, n, d)
        extra = np.eye(n, dtype=bool)  # mask z2_i among the anchors of row i
        p2 = obj.target_relations(z2, z2, 0.05, extra_mask=extra)
        # matches the brute-force masked softmax over the batch gram matrix
        sims = np.concatenate([np.zeros((n, 1)), z2 @ z2.T], axis=1)
        mask = np.concatenate([np.ones((n, 1), dtype=bool), extra], axis=1)
        np.testing.assert_allclose(p2, masked_softmax_oracle(sims, 0.05, mask),
                                   atol=1e-6)
        # and the whole loss family stays finite and decomposes
        cfg = obj.ObjectiveConfig(lam=0.5)
        with Tape():
            losses = obj.compute_losses(Tensor(z1, dtype=None), z2, z2, cfg,
                                        extra_mask=extra)
        lhs = float(losses["sce"].data)
        rhs = 0.5 * float(losses["infonce"].data) + 0.5 * (
            float(losses["ressl"].data) + float(losses["ceil"].data))
        assert np.isfinite(lhs)
        assert abs(lhs - rhs) / max(1.0, abs(lhs)) <= 1e-10


class TestVerifyDecomposition:
    def test_f32_passes(self):
        report = obj.verify_decomposition(trials=30, seed=0)
        assert report["passed"], report
        assert report["max_residual"] <= 1e-5

    def test_f64_passes(self):
        report = obj.verify_decomposition(trials=30, seed=0, use_f64=True)
        assert report["passed"], report
        assert report["max_residual"] <= 1e-10

    def test_lam_one_residual_is_sce_minus_infonce(self):
        z1, z2, q = (unit_rows(63, 8, 16), unit_rows(64, 8, 16),
                     unit_rows(65, 32, 16))
        cfg = obj.ObjectiveConfig(lam=1.0)
        with Tape():
            losses = obj.compute_losses(Tensor(z1, dtype=None), z2, q, cfg)
        assert abs(float(losses["sce"].data)
                   - float(losses["infonce"].data)) < 1e-6

    def test_corrupted_ceil_fails(self):
        # negative control: removing the positive-mass term breaks Prop-style
        # agreement between sce and its decomposition
        z1, z2, q = (unit_rows(66, 8, 16), unit_rows(67, 8, 16),
                     unit_rows(68, 16, 16))
        cfg = obj.ObjectiveConfig(lam=0.5)
        with Tape():
            losses = obj.compute_losses(Tensor(z1, dtype=None), z2, q, cfg)
            block = obj.similarity_logits(Tensor(z1, dtype=None),
                                          Tensor(z2, dtype=None), q)
            corrupted_ceil = ad.scale(obj.ceil_loss(block, cfg.tau), 0.5)
        lhs = float(losses["sce"].data)
        rhs = 0.5 * float(losses["infonce"].data) + 0.5 * (
            float(losses["ressl"].data) + float(corrupted_ceil.data))
        assert abs(lhs - rhs) / max(1.0, abs(lhs)) > 1e-5
