import numpy as np
import pytest

from queryguard.analysis import TradeoffConfig, curve_to_csv, tradeoff_curve
from queryguard.errors import ConfigError


def by_mu(points):
    return {round(p.mu, 6): p for p in points}


class TestTradeoffCurve:
    def test_mu_minus_one_catches_everything(self):
        points = by_mu(tradeoff_curve(TradeoffConfig(samples=2000)))
        p = points[-1.0]
        assert p.alpha_det == 1.0 and p.alpha_fp == 1.0

    def test_beta_zero_detects_below_one(self):
        points = tradeoff_curve(TradeoffConfig(beta=0.0, samples=2000))
        for p in points:
            if p.mu < 1.0:
                assert p.alpha_det == 1.0

    def test_rates_non_increasing_in_mu(self):
        points = tradeoff_curve(TradeoffConfig(samples=20_000, seed=5))
        dets = [p.alpha_det for p in points]
        fps = [p.alpha_fp for p in points]
        assert all(a >= b for a, b in zip(dets, dets[1:]))
        assert all(a >= b for a, b in zip(fps, fps[1:]))

    def test_detection_dominates_fp_at_small_beta(self):
        points = tradeoff_curve(TradeoffConfig(
            dim=64, sigma=1.0, beta=0.1, samples=100_000, seed=7))
        for p in points:
            assert p.alpha_det >= p.alpha_fp

    def test_sharding_is_deterministic(self):
        a = tradeoff_curve(TradeoffConfig(samples=150_000, seed=3))
        b = tradeoff_curve(TradeoffConfig(samples=150_000, seed=3))
        assert a == b

    def test_regression_values_from_1e6_run(self):
        # frozen from a 1e6-sample Monte Carlo run at seed 2024
        # (d=64, sigma=1, beta=0.1); the detection curve falls off only
        # past mu ~ 0.99 while false positives vanish long before 0.9
        grid = np.array([0.9, 0.99, 0.995, 0.997])
        points = by_mu(tradeoff_curve(TradeoffConfig(
            samples=1_000_000, seed=2024, thresholds=grid)))
        assert points[0.9].alpha_det == 1.0
        assert points[0.9].alpha_fp == 0.0
        assert points[0.99].alpha_det == pytest.approx(0.997652, abs=1e-6)
        assert points[0.995].alpha_det == pytest.approx(0.536704, abs=1e-6)
        assert points[0.997].alpha_det == pytest.approx(0.026942, abs=1e-6)

    def test_custom_encoder_hook(self):
        def coarse(rows):
            return np.round(rows, 1)

        points = tradeoff_curve(TradeoffConfig(samples=2000, encoder=coarse))
        assert points[0].alpha_det == 1.0

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TradeoffConfig(sigma=0.0)
        with pytest.raises(ConfigError):
            TradeoffConfig(samples=10)

    def test_csv_output(self, tmp_path):
        points = tradeoff_curve(TradeoffConfig(samples=2000))
        path = tmp_path / "curve.csv"
        curve_to_csv(points, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "mu,alpha_det,alpha_fp"
        assert len(lines) == len(points) + 1
