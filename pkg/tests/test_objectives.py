"""Loss and metric tests: zero identities, hand-computed values, a loop
oracle for the two-window spatial loss, and horizon frame mapping."""

import numpy as np
import pytest

from motionmoe import autodiff as ad
from motionmoe.objectives import (LossWeights, ape, jpe, report_at_horizons,
                                  spatial_loss, temporal_consistency_loss,
                                  total_loss)


def loop_spatial_loss(pred, gt, t, lam):
    """Independent accumulation: per-window scaled sums of squared deltas."""
    m, j, _, t_total = pred.shape
    hist = fut = 0.0
    for s in range(m):
        for jj in range(j):
            for i in range(t_total):
                d = np.sum((pred[s, jj, :, i] - gt[s, jj, :, i]) ** 2)
                if i < t:
                    hist += d
                else:
                    fut += d
    return lam / (j * m * t) * hist + 1.0 / (j * m * (t_total - t)) * fut


class TestLosses:
    def test_zero_when_prediction_is_exact(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 3, 6))
        pred, gt = ad.Tensor(x), ad.Tensor(x.copy())
        assert spatial_loss(pred, gt, 4).item() == 0.0
        assert temporal_consistency_loss(pred, gt).item() == 0.0
        assert total_loss(pred, gt, 4).item() == 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_spatial_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.standard_normal((2, 4, 3, 7))
        gt = rng.standard_normal((2, 4, 3, 7))
        t = int(rng.integers(1, 7))
        lam = float(rng.uniform(0.0, 1.0))
        got = spatial_loss(ad.Tensor(pred), ad.Tensor(gt), t,
                           LossWeights(lambda_hist=lam)).item()
        assert got == pytest.approx(loop_spatial_loss(pred, gt, t, lam), rel=1e-12)

    def test_future_only_offset_example(self):
        # unit offset on every coordinate: each squared delta contributes 3
        # per frame; future mean = 3, history adds lambda * 3
        m, j, t, t_total = 2, 5, 4, 10
        gt = np.zeros((m, j, 3, t_total))
        pred = np.ones((m, j, 3, t_total))
        loss = spatial_loss(ad.Tensor(pred), ad.Tensor(gt), t,
                            LossWeights(lambda_hist=0.1)).item()
        assert loss == pytest.approx(0.1 * 3.0 + 3.0, rel=1e-12)

    def test_temporal_ignores_constant_offset(self):
        rng = np.random.default_rng(3)
        gt = rng.standard_normal((2, 3, 3, 8))
        pred = gt + 5.0  # same velocities
        assert temporal_consistency_loss(ad.Tensor(pred), ad.Tensor(gt)).item() == \
            pytest.approx(0.0, abs=1e-12)

    def test_temporal_hand_value(self):
        # one joint, one coordinate axis active: gt still, pred moves 1/frame
        gt = np.zeros((1, 1, 3, 3))
        pred = np.zeros((1, 1, 3, 3))
        pred[0, 0, 0] = [0.0, 1.0, 2.0]
        # velocity deltas: [1, 1] on one of 3 coords -> mean over 2*3 entries
        got = temporal_consistency_loss(ad.Tensor(pred), ad.Tensor(gt)).item()
        assert got == pytest.approx(2.0 / 6.0, rel=1e-12)

    def test_total_is_weighted_sum(self):
        rng = np.random.default_rng(4)
        pred = ad.Tensor(rng.standard_normal((2, 3, 3, 6)))
        gt = ad.Tensor(rng.standard_normal((2, 3, 3, 6)))
        w = LossWeights(alpha=2.0, beta=0.5, lambda_hist=0.3)
        expected = (2.0 * spatial_loss(pred, gt, 4, w).item()
                    + 0.5 * temporal_consistency_loss(pred, gt).item())
        assert total_loss(pred, gt, 4, w).item() == pytest.approx(expected, rel=1e-12)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)

    def test_bad_history_window(self):
        x = ad.Tensor(np.zeros((1, 2, 3, 5)))
        with pytest.raises(ad.ShapeError):
            spatial_loss(x, x, 0)
        with pytest.raises(ad.ShapeError):
            spatial_loss(x, x, 5)

    def test_loss_gradient(self):
        rng = np.random.default_rng(5)
        gt = ad.Tensor(rng.standard_normal((2, 3, 3, 6)))
        pred = ad.Tensor(rng.standard_normal((2, 3, 3, 6)), requires_grad=True)

        def f(t):
            return total_loss(t, gt, 4)

        assert ad.finite_difference_check(f, pred) < 1e-6


class TestMetrics:
    def test_zero_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 5, 3))
        assert jpe(x, x.copy()) == 0.0
        assert ape(x, x.copy()) == 0.0

    def test_three_four_five_displacement(self):
        gt = np.zeros((1, 2, 3))
        pred = np.zeros((1, 2, 3))
        pred[0, 1] = [3.0, 4.0, 0.0]  # distance 5 on one of two joints
        assert jpe(pred, gt) == pytest.approx(2.5, abs=1e-15)
        single = jpe(pred[:, 1:], gt[:, 1:])
        assert single == pytest.approx(5.0, abs=1e-15)

    def test_ape_translation_invariance(self):
        rng = np.random.default_rng(1)
        gt = rng.standard_normal((3, 6, 3))
        pred = rng.standard_normal((3, 6, 3))
        shift = rng.standard_normal((3, 1, 3)) * 100.0  # per-person offsets
        assert abs(ape(pred + shift, gt) - ape(pred, gt)) < 1e-9
        assert abs(jpe(pred + shift, gt) - jpe(pred, gt)) > 1.0

    def test_ape_root_choice(self):
        rng = np.random.default_rng(2)
        gt = rng.standard_normal((2, 4, 3))
        pred = rng.standard_normal((2, 4, 3))
        vals = {r: ape(pred, gt, root_index=r) for r in range(4)}
        assert len(set(vals.values())) > 1
        with pytest.raises(ad.ShapeError):
            ape(pred, gt, root_index=4)


class TestHorizonReport:
    def make_pair(self, m=2, j=3, t=5, t_total=10, seed=0):
        rng = np.random.default_rng(seed)
        gt = rng.standard_normal((m, j, 3, t_total))
        pred = rng.standard_normal((m, j, 3, t_total))
        return pred, gt, t

    def test_horizon_frame_mapping(self):
        pred, gt, t = self.make_pair()
        # 25 fps: 0.04 s -> first predicted frame, 0.2 s -> fifth
        report = report_at_horizons(pred, gt, t, fps=25.0, horizons=(0.04, 0.2))
        assert report.jpe_at[0.04] == pytest.approx(jpe(pred[..., 5], gt[..., 5]))
        assert report.jpe_at[0.2] == pytest.approx(jpe(pred[..., 9], gt[..., 9]))

    def test_average_covers_every_predicted_frame(self):
        pred, gt, t = self.make_pair()
        report = report_at_horizons(pred, gt, t, fps=25.0, horizons=(0.04,))
        expected = np.mean([jpe(pred[..., i], gt[..., i]) for i in range(5, 10)])
        assert report.avg_jpe == pytest.approx(expected, rel=1e-12)

    def test_fractional_frame_horizon_rejected(self):
        pred, gt, t = self.make_pair()
        with pytest.raises(ValueError, match="whole predicted frame"):
            report_at_horizons(pred, gt, t, fps=25.0, horizons=(0.05,))

    def test_horizon_beyond_window_rejected(self):
        pred, gt, t = self.make_pair()
        with pytest.raises(ValueError, match="exceeds"):
            report_at_horizons(pred, gt, t, fps=25.0, horizons=(0.24,))

    def test_table_format(self):
        pred, gt, t = self.make_pair()
        table = report_at_horizons(pred, gt, t, fps=25.0,
                                   horizons=(0.04, 0.2)).to_table()
        lines = table.splitlines()
        assert lines[0] == "metric\t0.04s\t0.2s\tAvg"
        assert lines[1].startswith("JPE\t") and lines[2].startswith("APE\t")
        assert len(lines[1].split("\t")) == 4
