import numpy as np
import pytest

from mot3d.autodiff import Tensor
from mot3d.losses import (
    LossWeights,
    default_w_act,
    default_w_occ,
    loss_noc,
    loss_rec,
    loss_track,
)

from fd_oracle import check_gradients

LN2 = float(np.log(2.0))


class TestLossNoc:
    def test_zero_for_exact_prediction(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(-0.5, 0.5, (50, 3))
        assert loss_noc(gt.copy(), gt, "chair").item() == 0.0

    def test_table_symmetry_branch(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(-0.5, 0.5, (50, 3))
        rotated = gt * np.array([-1.0, -1.0, 1.0])  # 180 degrees about up
        assert loss_noc(rotated, gt, "table").item() == pytest.approx(0.0, abs=1e-15)
        assert loss_noc(rotated, gt, "chair").item() > 0.01

    def test_constant_offset_quadratic_branch(self):
        gt = np.zeros((10, 3))
        pred = gt + 0.5
        # Huber with delta=1: 0.5 * 0.5^2 per element
        assert loss_noc(pred, gt, "chair").item() == pytest.approx(0.125, abs=1e-15)

    def test_linear_branch(self):
        gt = np.zeros((4, 3))
        pred = gt + 3.0
        assert loss_noc(pred, gt, "chair").item() == pytest.approx(3.0 - 0.5, abs=1e-15)

    def test_table_never_worse_than_nontable(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            gt = rng.uniform(-0.5, 0.5, (30, 3))
            pred = gt + rng.normal(0, 0.3, (30, 3))
            assert (
                loss_noc(pred, gt, "table").item() <= loss_noc(pred, gt, "chair").item() + 1e-15
            )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_noc(np.zeros((3, 3)), np.zeros((4, 3)), "chair")

    def test_gradients(self):
        rng = np.random.default_rng(3)
        for cls in ["chair", "table"] * 5:
            gt = rng.uniform(-0.5, 0.5, (12, 3))
            pred = Tensor(gt + rng.normal(0, 0.4, (12, 3)), requires_grad=True)
            check_gradients(lambda: loss_noc(pred, gt, cls), [pred], rng)


class TestLossRec:
    def _grid(self, rng, frac=0.2):
        return rng.random((8, 8, 8)) < frac

    def test_perfect_prediction_near_zero(self):
        rng = np.random.default_rng(4)
        gt = self._grid(rng)
        pred = np.where(gt, 1.0 - 1e-9, 1e-9)
        assert loss_rec(pred, gt, w_occ=2.0).item() < 1e-6

    def test_uniform_half_closed_form(self):
        rng = np.random.default_rng(5)
        gt = self._grid(rng)
        for w_occ in (1.0, 3.5, 10.0):
            value = loss_rec(np.full(gt.shape, 0.5), gt, w_occ=w_occ).item()
            assert value == pytest.approx((w_occ + 1.0) * LN2, abs=1e-12)

    def test_w_occ_one_is_plain_two_set_bce(self):
        rng = np.random.default_rng(6)
        gt = self._grid(rng)
        p = np.clip(rng.random(gt.shape), 0.05, 0.95)
        value = loss_rec(p, gt, w_occ=1.0).item()
        expected = -np.log(p[gt]).mean() - np.log(1.0 - p[~gt]).mean()
        assert value == pytest.approx(expected, rel=1e-12)

    def test_default_weight_ratio(self):
        g = np.zeros((8, 8, 8), dtype=bool)
        g[:2] = True  # 128 occupied, 384 free
        assert default_w_occ(g) == pytest.approx(3.0)
        g2 = np.zeros((8, 8, 8), dtype=bool)
        g2[0, 0, 0] = True
        assert default_w_occ(g2) == 50.0  # clamped
        assert default_w_occ(np.ones((4, 4, 4), dtype=bool)) == 1.0

    def test_gradients(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            gt = self._grid(rng)
            pred = Tensor(rng.uniform(0.05, 0.95, gt.shape), requires_grad=True)
            check_gradients(lambda: loss_rec(pred, gt, w_occ=2.5), [pred], rng)


class TestLossTrack:
    def test_near_zero_when_correct(self):
        labels = np.array([1.0, 0.0, 1.0, 0.0])
        pred = np.array([1.0 - 1e-9, 1e-9, 1.0 - 1e-9, 1e-9])
        assert loss_track(pred, labels, w_act=2.0).item() < 1e-6

    def test_single_active_closed_form(self):
        value = loss_track(np.array([0.5]), np.array([1.0]), w_act=2.0).item()
        assert value == pytest.approx(2.0 * LN2, abs=1e-12)

    def test_balanced_plain_bce(self):
        rng = np.random.default_rng(8)
        labels = np.array([1.0, 1.0, 0.0, 0.0])
        pred = np.clip(rng.random(4), 0.05, 0.95)
        value = loss_track(pred, labels, w_act=1.0).item()
        expected = -np.log(pred[:2]).mean() - np.log(1.0 - pred[2:]).mean()
        assert value == pytest.approx(expected, rel=1e-12)

    def test_empty_sets_contribute_zero(self):
        assert loss_track(np.zeros(0), np.zeros(0), w_act=5.0).item() == 0.0
        only_neg = loss_track(np.array([0.5]), np.array([0.0]), w_act=5.0).item()
        assert only_neg == pytest.approx(LN2, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss_track(np.zeros(3), np.zeros(4))

    def test_default_w_act_ratio(self):
        labels = np.array([1.0] + [0.0] * 9)
        assert default_w_act(labels) == pytest.approx(9.0)
        assert default_w_act(np.zeros(4)) == 100.0  # clamped when no actives
        assert default_w_act(np.ones(4)) == 1.0

    def test_gradients(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n = int(rng.integers(4, 24))
            labels = (rng.random(n) < 0.3).astype(float)
            pred = Tensor(rng.uniform(0.05, 0.95, n), requires_grad=True)
            check_gradients(lambda: loss_track(pred, labels, w_act=3.0), [pred], rng)


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert w.noc_weight == 3.0
        assert w.rec_weight == 0.75

    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(noc_weight=0.0)
        with pytest.raises(ValueError):
            LossWeights(w_act=-1.0)


class TestNonnegativity:
    def test_all_losses_nonnegative_random(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            gt = rng.uniform(-0.5, 0.5, (10, 3))
            pred = gt + rng.normal(0, 0.5, (10, 3))
            assert loss_noc(pred, gt, "chair").item() >= 0.0
            grid = rng.random((8, 8, 8)) < 0.3
            probs = rng.random(grid.shape)
            assert loss_rec(probs, grid).item() >= 0.0
            labels = (rng.random(6) < 0.5).astype(float)
            assert loss_track(rng.random(6), labels).item() >= 0.0
