"""Gain correction, cropping, decimation, noise injection, label units."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soundspeed.errors import ConfigError
from soundspeed.preprocess import (
    PreprocConfig,
    apply_gain,
    crop_transmit,
    decimate,
    fit_global_scale,
    gain_correct,
    inject_noise,
    label_to_units,
    to_input,
    units_to_label,
)
from soundspeed.solver import ChannelData

FS = 1.0 / 1.8e-8


class TestGain:
    def test_known_values(self):
        # at 0.48 dB/us, a sample 10 us deep is boosted by 4.8 dB
        trace = np.ones(3)
        fs = 1e6  # 1 sample per us
        out = gain_correct(trace, 0.48, fs)
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(10.0 ** (0.48 / 20.0))
        assert out[2] == pytest.approx(10.0 ** (0.96 / 20.0))

    def test_zero_rate_is_identity(self):
        trace = np.random.default_rng(0).standard_normal(50)
        assert np.allclose(gain_correct(trace, 0.0, FS), trace)

    def test_inverse_via_apply_gain(self):
        trace = np.random.default_rng(1).standard_normal(200)
        boosted = gain_correct(trace, 0.48, FS)
        back = apply_gain(boosted, -0.48, FS)
        assert np.allclose(back, trace, rtol=1e-12)

    def test_monotone_boost(self):
        out = gain_correct(np.ones(100), 0.48, FS)
        assert (np.diff(out) > 0).all()

    def test_rejects_negative_rate(self):
        with pytest.raises(ConfigError):
            gain_correct(np.ones(4), -0.1, FS)


class TestCrop:
    def test_drops_expected_samples(self):
        cd = ChannelData(traces=np.arange(3 * 4 * 100, dtype=np.float32)
                         .reshape(3, 4, 100), sample_rate=FS)
        # round(3e-6 * 55.55e6) = 167 > 100 -> use a shorter crop here
        out = crop_transmit(cd, 1e-6)
        n_drop = int(round(1e-6 * FS))  # 56
        assert out.n_time == 100 - n_drop
        assert np.array_equal(out.traces, cd.traces[:, :, n_drop:])

    def test_zero_crop_is_identity(self):
        cd = ChannelData(traces=np.ones((1, 2, 10), dtype=np.float32),
                         sample_rate=FS)
        out = crop_transmit(cd, 0.0)
        assert np.array_equal(out.traces, cd.traces)

    def test_overlong_crop_rejected(self):
        cd = ChannelData(traces=np.ones((1, 2, 10), dtype=np.float32),
                         sample_rate=FS)
        with pytest.raises(ConfigError):
            crop_transmit(cd, 1e-3)


class TestDecimate:
    def test_output_length(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 1881))
        y = decimate(x, 512)
        assert y.shape == (2, 3, 512)

    def test_dc_preserved(self):
        x = np.full((1, 1, 1000), 2.5)
        y = decimate(x, 250)
        # away from the edges the filtered DC level is exact
        assert np.allclose(y[0, 0, 10:-10], 2.5, rtol=1e-6)

    def test_antialiasing_kills_high_frequency(self):
        # a tone above the post-decimation Nyquist must be strongly attenuated
        n = 2048
        t = np.arange(n)
        hi = np.sin(2 * np.pi * 0.45 * t)  # 0.45 cycles/sample
        lo = np.sin(2 * np.pi * 0.02 * t)
        y_hi = decimate(hi[None, :], 256)[0]
        y_lo = decimate(lo[None, :], 256)[0]
        assert np.abs(y_hi).max() < 0.02 * np.abs(y_lo).max()

    def test_low_frequency_preserved(self):
        n = 2048
        t = np.arange(n)
        lo = np.sin(2 * np.pi * 0.01 * t)
        y = decimate(lo[None, :], 512)[0]
        # compare against the ideally resampled tone away from edges
        ratio = n / 512
        ref = np.sin(2 * np.pi * 0.01 * np.round(np.arange(512) * ratio))
        err = np.abs(y[20:-20] - ref[20:-20]).max()
        assert err < 0.03

    def test_upsampling_linear_interp(self):
        x = np.array([[0.0, 1.0, 2.0, 3.0]])
        y = decimate(x, 7)
        assert np.allclose(y[0], np.linspace(0.0, 3.0, 7))


class TestNoise:
    def test_deterministic_in_seed(self):
        x = np.random.default_rng(0).standard_normal((3, 64, 32))
        a = inject_noise(x, 0.05, 1024, seed=7)
        b = inject_noise(x, 0.05, 1024, seed=7)
        c = inject_noise(x, 0.05, 1024, seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_noise_level(self):
        # added noise RMS should be sigma * signal RMS within ~2 %
        rng = np.random.default_rng(1)
        x = rng.standard_normal(1_000_000)
        y = inject_noise(x, 0.05, 0, seed=3)
        added = y - x
        target = 0.05 * math.sqrt(np.mean(x ** 2))
        assert math.sqrt(np.mean(added ** 2)) == pytest.approx(target, rel=0.02)

    def test_quantization_grid(self):
        x = np.random.default_rng(2).standard_normal(1000)
        y = inject_noise(x, 0.0, 64, seed=0)
        peak = np.abs(y).max()
        step = 2 * peak / 63
        k = (y + peak) / step
        assert np.abs(k - np.round(k)).max() < 1e-9
        assert np.unique(y).size <= 64

    def test_zero_sigma_no_quant_is_identity(self):
        x = np.random.default_rng(3).standard_normal(100)
        assert np.array_equal(inject_noise(x, 0.0, 0, seed=0), x)

    def test_quantization_error_bound(self):
        x = np.random.default_rng(4).standard_normal(1000)
        y = inject_noise(x, 0.0, 1024, seed=0)
        peak = np.abs(x).max()
        assert np.abs(y - x).max() <= peak / 1023 + 1e-12


class TestToInput:
    def _channel(self, seed=0, nt=3, ne=16, ntime=800):
        rng = np.random.default_rng(seed)
        return ChannelData(traces=rng.standard_normal((nt, ne, ntime))
                           .astype(np.float32), sample_rate=FS)

    def test_shape_and_orientation(self):
        cfg = PreprocConfig(target_time_len=128, crop_time=1e-6)
        x = to_input(self._channel(), cfg)
        assert x.shape == (3, 128, 16)

    def test_unit_rms_when_unscaled(self):
        cfg = PreprocConfig(target_time_len=128, crop_time=1e-6)
        x = to_input(self._channel(), cfg)
        assert math.sqrt(np.mean(x ** 2)) == pytest.approx(1.0, rel=1e-9)

    def test_global_scale_respected(self):
        cfg = PreprocConfig(target_time_len=128, crop_time=1e-6, global_scale=0.5)
        cfg2 = PreprocConfig(target_time_len=128, crop_time=1e-6, global_scale=1.0)
        a = to_input(self._channel(), cfg)
        b = to_input(self._channel(), cfg2)
        assert np.allclose(a, 0.5 * b, rtol=1e-12)

    def test_fit_global_scale_normalizes_dataset(self):
        cfg = PreprocConfig(target_time_len=128, crop_time=1e-6)
        chans = [self._channel(seed=s) for s in range(3)]
        scale = fit_global_scale(chans, cfg)
        cfg2 = PreprocConfig(target_time_len=128, crop_time=1e-6,
                             global_scale=scale)
        sq = 0.0
        n = 0
        for ch in chans:
            x = to_input(ch, cfg2)
            sq += float(np.sum(x ** 2))
            n += x.size
        assert math.sqrt(sq / n) == pytest.approx(1.0, rel=1e-9)

    def test_deterministic(self):
        cfg = PreprocConfig(target_time_len=128, crop_time=1e-6)
        a = to_input(self._channel(), cfg)
        b = to_input(self._channel(), cfg)
        assert np.array_equal(a, b)


class TestLabelUnits:
    def test_known_values(self):
        cfg = PreprocConfig()
        assert label_to_units(np.array(1550.0), cfg) == 0.0
        assert label_to_units(np.array(1800.0), cfg) == 1.0
        assert label_to_units(np.array(1300.0), cfg) == -1.0
        assert units_to_label(np.array(0.5), cfg) == 1675.0

    @given(v=st.floats(1000.0, 2500.0))
    @settings(max_examples=50, deadline=None)
    def test_round_trip(self, v):
        cfg = PreprocConfig()
        assert units_to_label(label_to_units(np.array(v), cfg), cfg) == \
            pytest.approx(v, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PreprocConfig(label_span=0.0)
        with pytest.raises(ConfigError):
            PreprocConfig(quant_levels=1)
        with pytest.raises(ConfigError):
            PreprocConfig(gain_rate=-1.0)

    def test_digest_changes_with_config(self):
        a = PreprocConfig()
        b = PreprocConfig(gain_rate=0.5)
        assert a.digest() != b.digest()
        assert a.digest() == PreprocConfig().digest()
