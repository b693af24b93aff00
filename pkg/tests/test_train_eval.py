"""Error metrics and the training loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from soundspeed.dataio import SampleRecord
from soundspeed.errors import ConfigError
from soundspeed.nn import build_network, load_checkpoint
from soundspeed.preprocess import PreprocConfig
from soundspeed.solver import ChannelData
from soundspeed.train_eval import (
    TrainConfig,
    compute_metrics,
    constant_baseline_metrics,
    evaluate,
    mean_abs,
    median_abs,
    predict,
    rmse,
    train,
    windowed_min_abs,
)

FS = 1.0 / 1.8e-8


def brute_force_windowed(pred, truth, radius):
    h, w = pred.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            i0, i1 = max(0, i - radius), min(h, i + radius + 1)
            j0, j1 = max(0, j - radius), min(w, j + radius + 1)
            out[i, j] = np.abs(pred[i, j] - truth[i0:i1, j0:j1]).min()
    return out


class TestBasicMetrics:
    def test_rmse_hand_value(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        truth = np.array([[1.0, 1.0], [1.0, 1.0]])
        # sqrt((0 + 1 + 4 + 9)/4) = sqrt(3.5)
        assert rmse(pred, truth) == pytest.approx(math.sqrt(3.5))

    def test_mean_abs_hand_value(self):
        pred = np.array([[1.0, -1.0], [2.0, 0.0]])
        truth = np.zeros((2, 2))
        mu, sigma = mean_abs(pred, truth)
        assert mu == pytest.approx(1.0)
        assert sigma == pytest.approx(np.std([1.0, 1.0, 2.0, 0.0]))

    def test_median_is_lower_median(self):
        pred = np.array([[0.0, 1.0], [2.0, 3.0]])
        truth = np.zeros((2, 2))
        # sorted errors [0,1,2,3]: lower median = element (4-1)//2 = 1
        assert median_abs(pred, truth) == 1.0

    def test_perfect_prediction(self):
        x = np.random.default_rng(0).uniform(1300, 1800, (8, 4))
        assert rmse(x, x) == 0.0
        assert mean_abs(x, x) == (0.0, 0.0)
        assert median_abs(x, x) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            rmse(np.zeros((2, 2)), np.zeros((3, 2)))

    @given(arrays(np.float64, (5, 4), elements=st.floats(-100, 100)),
           arrays(np.float64, (5, 4), elements=st.floats(-100, 100)))
    @settings(max_examples=30, deadline=None)
    def test_rmse_dominates_mean_abs(self, a, b):
        mu, _ = mean_abs(a, b)
        assert rmse(a, b) >= mu - 1e-12


class TestWindowedMetrics:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = rng.uniform(1300, 1800, (16, 9))
            truth = rng.uniform(1300, 1800, (16, 9))
            for radius in (0, 1, 3, 5):
                fast = windowed_min_abs(pred, truth, radius)
                slow = brute_force_windowed(pred, truth, radius)
                assert np.array_equal(fast, slow)

    def test_radius_zero_is_plain_abs(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0, 1, (6, 6))
        truth = rng.uniform(0, 1, (6, 6))
        assert np.array_equal(windowed_min_abs(pred, truth, 0),
                              np.abs(pred - truth))

    def test_monotone_in_radius(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0, 1, (10, 10))
        truth = rng.uniform(0, 1, (10, 10))
        prev = windowed_min_abs(pred, truth, 0)
        for radius in (1, 2, 4):
            cur = windowed_min_abs(pred, truth, radius)
            assert (cur <= prev + 1e-15).all()
            prev = cur

    def test_huge_radius_is_global_min(self):
        rng = np.random.default_rng(3)
        pred = rng.uniform(0, 1, (5, 7))
        truth = rng.uniform(0, 1, (5, 7))
        out = windowed_min_abs(pred, truth, 20)
        for i in range(5):
            for j in range(7):
                assert out[i, j] == pytest.approx(
                    np.abs(pred[i, j] - truth).min())

    def test_shifted_truth_scored_as_match(self):
        # a prediction displaced by <= radius pixels gets near-zero windowed
        # error even though the plain error is large
        truth = np.full((20, 20), 1500.0)
        truth[8:12, 8:12] = 1700.0
        pred = np.full((20, 20), 1500.0)
        pred[10:14, 10:14] = 1700.0  # same blob shifted by (2, 2)
        plain = np.abs(pred - truth)
        windowed = windowed_min_abs(pred, truth, 5)
        assert plain.max() == 200.0
        assert windowed.max() == 0.0


class TestReports:
    def test_pooled_metrics(self):
        preds = [np.zeros((4, 4)), np.ones((4, 4))]
        truths = [np.zeros((4, 4)), np.zeros((4, 4))]
        rep = compute_metrics(preds, truths, radius=1)
        # pooled: 16 zeros and 16 ones
        assert rep.rmse == pytest.approx(math.sqrt(0.5))
        assert rep.mean_abs == pytest.approx(0.5)
        assert rep.median_abs == 0.0  # lower median of [0]*16+[1]*16
        assert rep.per_sample == [0.0, 1.0]

    def test_windowed_never_exceeds_plain(self):
        rng = np.random.default_rng(4)
        preds = [rng.uniform(1300, 1800, (12, 8)) for _ in range(5)]
        truths = [rng.uniform(1300, 1800, (12, 8)) for _ in range(5)]
        rep = compute_metrics(preds, truths)
        assert rep.windowed_mean <= rep.mean_abs
        assert rep.windowed_median <= rep.median_abs

    def test_csv_and_text_rendering(self):
        rep = compute_metrics([np.ones((4, 4))], [np.zeros((4, 4))])
        csv_out = rep.to_csv("middle")
        assert csv_out.splitlines()[0].startswith("Network,RMSE,mu")
        assert "middle" in csv_out
        txt = rep.to_text("middle")
        assert "RMSE" in txt and "middle" in txt

    def test_constant_baseline(self):
        labels = [np.full((4, 4), 1400.0), np.full((4, 4), 1600.0)]
        recs = [SampleRecord(sample_id=i,
                             channel=ChannelData(traces=np.zeros((1, 2, 8),
                                                                 dtype=np.float32),
                                                 sample_rate=FS),
                             label=lab, meta={}) for i, lab in enumerate(labels)]
        rep = constant_baseline_metrics(recs)
        # mean is 1500; every error is 100
        assert rep.mean_abs == pytest.approx(100.0)
        assert rep.rmse == pytest.approx(100.0)


def synth_records(n, seed, nt=3, ne=16, ntime=700, oh=16, ow=8):
    """Synthetic records whose labels are linearly decodable from the traces,
    so a small network can learn quickly."""
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n):
        level = rng.uniform(-1.0, 1.0)
        traces = (level + 0.1 * rng.standard_normal((nt, ne, ntime))).astype(np.float32)
        label = np.full((oh, ow), 1550.0 + 200.0 * level, dtype=np.float32)
        recs.append(SampleRecord(sample_id=i,
                                 channel=ChannelData(traces=traces, sample_rate=FS),
                                 label=label, meta={}))
    return recs


PCFG = PreprocConfig(gain_rate=0.0, crop_time=0.0, target_time_len=64,
                     noise_sigma=0.01, quant_levels=0, global_scale=1.0)
ENC = (4, 4, 4, 4, 8, 8, 8)
DEC = (8, 4, 4, 4, 4)


def tiny_net(variant="single", seed=0):
    nt = 1 if variant == "single" else 3
    return build_network(variant, 64, 16, 16, 8, n_transmits=nt,
                         enc_channels=ENC, dec_channels=DEC, seed=seed)


class TestTraining:
    def test_zero_lr_leaves_weights_unchanged(self):
        net = tiny_net()
        before = [p.value.copy() for p in net.parameters()]
        cfg = TrainConfig(epochs=2, batch_size=4, learning_rate=0.0, seed=0)
        train(synth_records(8, 0), net, cfg, PCFG)
        for p, b in zip(net.parameters(), before):
            assert np.array_equal(p.value, b)

    def test_loss_decreases(self):
        net = tiny_net()
        cfg = TrainConfig(epochs=15, batch_size=4, learning_rate=1e-3, seed=0)
        result = train(synth_records(8, 1), net, cfg, PCFG)
        assert result.train_losses[-1] < 0.5 * result.train_losses[0]

    def test_deterministic_given_seed(self, tmp_path):
        recs = synth_records(8, 2)
        outs = []
        for run in range(2):
            net = tiny_net(seed=5)
            cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3,
                              seed=11)
            train(recs, net, cfg, PCFG)
            outs.append(np.concatenate([p.value.ravel()
                                        for p in net.parameters()]))
        assert np.array_equal(outs[0], outs[1])

    def test_best_checkpoint_saved(self, tmp_path):
        recs = synth_records(8, 3)
        test_recs = synth_records(4, 4)
        path = str(tmp_path / "best.usnn")
        net = tiny_net()
        cfg = TrainConfig(epochs=4, batch_size=4, learning_rate=1e-3, seed=0,
                          checkpoint_path=path, eval_every=1)
        result = train(recs, net, cfg, PCFG, test_records=test_recs)
        assert result.best_epoch >= 0
        assert math.isfinite(result.best_test_loss)
        back = load_checkpoint(path)
        assert back.variant == "single"
        # the checkpoint corresponds to the best recorded test loss
        assert min(l for _, l in result.test_losses) == result.best_test_loss

    def test_predict_and_evaluate(self):
        recs = synth_records(6, 5)
        net = tiny_net()
        preds = predict(net, recs, PCFG)
        assert len(preds) == 6
        assert preds[0].shape == (16, 8)
        rep = evaluate(net, recs, PCFG)
        assert math.isfinite(rep.rmse)

    def test_single_variant_uses_center_transmit(self):
        # zero out all but the center transmit: predictions must be identical
        recs = synth_records(4, 6)
        recs_zeroed = synth_records(4, 6)
        for r in recs_zeroed:
            r.channel.traces[0] = 0.0
            r.channel.traces[2] = 0.0
        net = tiny_net()
        a = predict(net, recs, PCFG)
        b = predict(net, recs_zeroed, PCFG)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_empty_training_set_rejected(self):
        with pytest.raises(ConfigError):
            train([], tiny_net(), TrainConfig(epochs=1), PCFG)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(optimizer="lbfgs")
