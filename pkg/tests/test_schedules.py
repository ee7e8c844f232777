"""Tests for the SGD optimizer and the lr / EMA-momentum schedules."""

import numpy as np
import pytest

from sce import schedules
from sce.autodiff import Tensor


def make_cfg(**kw):
    defaults = dict(base_lr=0.06, batch_size=256, reference_batch=256,
                    warmup_epochs=5, total_epochs=100, steps_per_epoch=10)
    defaults.update(kw)
    return schedules.ScheduleConfig(**defaults)


class TestScaledBaseLr:
    def test_reference_batch_identity(self):
        assert schedules.scaled_base_lr(make_cfg()) == pytest.approx(0.06)

    def test_linear_scaling(self):
        cfg = make_cfg(base_lr=0.3, batch_size=512)
        assert schedules.scaled_base_lr(cfg) == pytest.approx(0.6)

    def test_scale_down(self):
        cfg = make_cfg(base_lr=0.06, batch_size=64)
        assert schedules.scaled_base_lr(cfg) == pytest.approx(0.015)


class TestLrAt:
    def test_step_zero_is_zero(self):
        assert schedules.lr_at(make_cfg(), 0) == 0.0

    def test_end_of_warmup_reaches_scaled_lr(self):
        cfg = make_cfg()
        assert schedules.lr_at(cfg, cfg.warmup_steps) == pytest.approx(
            schedules.scaled_base_lr(cfg))

    def test_continuity_at_junction(self):
        cfg = make_cfg()
        before = schedules.lr_at(cfg, cfg.warmup_steps - 1)
        at = schedules.lr_at(cfg, cfg.warmup_steps)
        after = schedules.lr_at(cfg, cfg.warmup_steps + 1)
        ramp_step = schedules.scaled_base_lr(cfg) / cfg.warmup_steps
        assert abs(at - before) <= ramp_step + 1e-12
        assert abs(after - at) <= ramp_step + 1e-12

    def test_final_step_near_zero(self):
        cfg = make_cfg()
        assert schedules.lr_at(cfg, cfg.total_steps - 1) < \
            1e-6 * schedules.scaled_base_lr(cfg)

    def test_out_of_range(self):
        cfg = make_cfg()
        with pytest.raises(ValueError):
            schedules.lr_at(cfg, -1)
        with pytest.raises(ValueError):
            schedules.lr_at(cfg, cfg.total_steps)

    def test_no_warmup(self):
        cfg = make_cfg(warmup_epochs=0)
        assert schedules.lr_at(cfg, 0) == pytest.approx(
            schedules.scaled_base_lr(cfg))


class TestMomentumAt:
    def test_start_value(self):
        assert schedules.momentum_at(make_cfg(), 0) == pytest.approx(0.996)

    def test_end_value_is_one(self):
        cfg = make_cfg()
        assert schedules.momentum_at(cfg, cfg.total_steps) == pytest.approx(1.0)

    def test_midpoint(self):
        cfg = make_cfg()
        assert schedules.momentum_at(cfg, cfg.total_steps // 2) == \
            pytest.approx(0.998)

    def test_monotone_non_decreasing(self):
        cfg = make_cfg()
        vals = [schedules.momentum_at(cfg, s)
                for s in range(0, cfg.total_steps + 1, 7)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_out_of_range(self):
        cfg = make_cfg()
        with pytest.raises(ValueError):
            schedules.momentum_at(cfg, cfg.total_steps + 1)


class TestScheduleConfig:
    def test_warmup_exceeds_total(self):
        with pytest.raises(ValueError):
            make_cfg(warmup_epochs=200)

    def test_invalid_ema_base(self):
        with pytest.raises(ValueError):
            make_cfg(ema_base=1.5)


class TestSgdUpdate:
    def _param(self, values, velocity=None):
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True,
                   dtype=None)
        params = {"w": t}
        opt = schedules.OptimizerState(params, momentum=0.9, weight_decay=0.0)
        if velocity is not None:
            opt.velocity["w"] = np.asarray(velocity, dtype=np.float64)
        return params, opt

    def test_zero_grad_zero_velocity_unchanged(self):
        params, opt = self._param([1.0, 2.0])
        params["w"].grad = np.zeros(2)
        schedules.sgd_update(params, opt, lr=0.1)
        np.testing.assert_array_equal(params["w"].data, [1.0, 2.0])

    def test_single_step_vanilla(self):
        params, opt = self._param([1.0])
        params["w"].grad = np.array([0.5])
        schedules.sgd_update(params, opt, lr=0.1)
        np.testing.assert_allclose(params["w"].data, [1.0 - 0.1 * 0.5])

    def test_two_steps_match_recurrence(self):
        # hand-rolled recurrence on a scalar quadratic 0.5 * a * w^2
        a, lr, m, wd = 2.0, 0.05, 0.9, 0.01
        w_ref, v_ref = 1.0, 0.0
        params = {"w": Tensor(np.array([1.0]), requires_grad=True, dtype=None)}
        opt = schedules.OptimizerState(params, momentum=m, weight_decay=wd)
        for _ in range(2):
            params["w"].grad = a * params["w"].data
            schedules.sgd_update(params, opt, lr)
            g = a * w_ref + wd * w_ref
            v_ref = m * v_ref + g
            w_ref = w_ref - lr * v_ref
        np.testing.assert_allclose(params["w"].data, [w_ref], atol=1e-7)

    def test_momentum_zero_wd_zero_is_gradient_descent(self):
        params = {"w": Tensor(np.array([3.0]), requires_grad=True, dtype=None)}
        opt = schedules.OptimizerState(params, momentum=0.0, weight_decay=0.0)
        for _ in range(3):
            params["w"].grad = 2.0 * params["w"].data
            schedules.sgd_update(params, opt, 0.1)
        # plain GD on w^2: w <- 0.8 w each step
        np.testing.assert_allclose(params["w"].data, [3.0 * 0.8 ** 3],
                                   rtol=1e-7)

    def test_non_finite_gradient(self):
        params, opt = self._param([1.0])
        params["w"].grad = np.array([np.nan])
        with pytest.raises(FloatingPointError):
            schedules.sgd_update(params, opt, 0.1)

    def test_none_grad_skipped(self):
        params, opt = self._param([1.0])
        schedules.sgd_update(params, opt, 0.1)
        np.testing.assert_array_equal(params["w"].data, [1.0])

    def test_velocity_ignores_non_grad_params(self):
        params = {"w": Tensor(np.ones(2), requires_grad=True),
                  "stats": Tensor(np.ones(2))}
        opt = schedules.OptimizerState(params)
        assert set(opt.velocity) == {"w"}
